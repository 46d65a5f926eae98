use crate::error::{invalid, Result, TensorError};
use crate::ops::reduce::split_dim;
use crate::tensor::Tensor;

impl Tensor {
    /// Softmax along `dim`.
    pub fn softmax(&self, dim: usize) -> Result<Tensor> {
        if dim >= self.rank() {
            return Err(invalid(
                "softmax",
                format!("axis {dim} out of range for rank {}", self.rank()),
            ));
        }
        let (outer, n, inner) = split_dim(self.shape(), dim);
        let x = self.data();
        let mut out = vec![0.0f32; x.len()];
        let mut row = vec![0.0f32; n];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let mut max = f32::NEG_INFINITY;
                for k in 0..n {
                    row[k] = x[at(k)];
                    max = max.max(row[k]);
                }
                let mut sum = 0.0f32;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for k in 0..n {
                    out[at(k)] = row[k] / sum;
                }
            }
        }
        let y = std::rc::Rc::new(out.clone());
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            out,
            &[self],
            move |g, _| {
                let mut gx = vec![0.0f32; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let dot: f32 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..n {
                            gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    /// Layer normalization over the last axis followed by the affine
    /// `gamma`, `beta` (each of the last axis' extent).
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| invalid("layer_norm", "rank-0 input"))?;
        if gamma.numel() != d || beta.numel() != d {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let rows = self.numel() / d;
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut out = vec![0.0f32; x.len()];
        let mut xhat = vec![0.0f32; x.len()];
        let mut inv_std = vec![0.0f32; rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * gm[j] + bt[j];
            }
        }
        let g_c = gamma.clone();
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            &[self, gamma, beta],
            move |g, needs| {
                let gm = g_c.data();
                let gx = needs[0].then(|| {
                    let mut gx = vec![0.0f32; g.len()];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut s1 = 0.0f32;
                        let mut s2 = 0.0f32;
                        for j in 0..d {
                            let gy = gr[j] * gm[j];
                            s1 += gy;
                            s2 += gy * xh[j];
                        }
                        let (m1, m2) = (s1 / d as f32, s2 / d as f32);
                        for j in 0..d {
                            gx[r * d + j] = inv_std[r] * (gr[j] * gm[j] - m1 - xh[j] * m2);
                        }
                    }
                    gx
                });
                let ggamma = needs[1].then(|| {
                    let mut acc = vec![0.0f32; d];
                    for r in 0..rows {
                        for j in 0..d {
                            acc[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                    acc
                });
                let gbeta = needs[2].then(|| {
                    let mut acc = vec![0.0f32; d];
                    for r in 0..rows {
                        for j in 0..d {
                            acc[j] += g[r * d + j];
                        }
                    }
                    acc
                });
                vec![gx, ggamma, gbeta]
            },
        )
    }

    /// 3×3 box mean with stride 1 over the last two axes; borders use
    /// replicate padding, so constant maps stay constant.
    pub fn avg_pool3x3(&self) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(invalid(
                "avg_pool3x3",
                format!("need at least 2 axes, got {:?}", self.shape()),
            ));
        }
        let r = self.rank();
        let (h, w) = (self.dim(r - 2), self.dim(r - 1));
        let planes = self.numel() / (h * w);
        let x = self.data();
        let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let mut out = vec![0.0f32; x.len()];
        let mut rows = vec![0.0f32; h * w];
        for p in 0..planes {
            let img = &x[p * h * w..(p + 1) * h * w];
            // Horizontal pass then vertical pass.
            for y in 0..h {
                for xx in 0..w {
                    let l = clampi(xx as isize - 1, w);
                    let rr = clampi(xx as isize + 1, w);
                    rows[y * w + xx] = img[y * w + l] + img[y * w + xx] + img[y * w + rr];
                }
            }
            let dst = &mut out[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                let u = clampi(y as isize - 1, h);
                let d = clampi(y as isize + 1, h);
                for xx in 0..w {
                    dst[y * w + xx] =
                        (rows[u * w + xx] + rows[y * w + xx] + rows[d * w + xx]) / 9.0;
                }
            }
        }
        Tensor::from_op(
            "avg_pool3x3",
            self.shape().to_vec(),
            out,
            &[self],
            move |g, _| {
                let mut gx = vec![0.0f32; g.len()];
                let mut cols = vec![0.0f32; h * w];
                for p in 0..planes {
                    let gp = &g[p * h * w..(p + 1) * h * w];
                    cols.iter_mut().for_each(|v| *v = 0.0);
                    for y in 0..h {
                        let u = clampi(y as isize - 1, h);
                        let d = clampi(y as isize + 1, h);
                        for xx in 0..w {
                            let v = gp[y * w + xx] / 9.0;
                            cols[u * w + xx] += v;
                            cols[y * w + xx] += v;
                            cols[d * w + xx] += v;
                        }
                    }
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            let v = cols[y * w + xx];
                            let l = clampi(xx as isize - 1, w);
                            let rr = clampi(xx as isize + 1, w);
                            dst[y * w + l] += v;
                            dst[y * w + xx] += v;
                            dst[y * w + rr] += v;
                        }
                    }
                }
                vec![Some(gx)]
            },
        )
    }
}
