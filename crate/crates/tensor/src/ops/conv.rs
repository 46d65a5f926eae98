//! 2-D convolution and its transpose, both lowered to im2col + GEMM.

use crate::error::{invalid, Result, TensorError};
use crate::ops::matmul::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one image `[c, h, w]` into `[c·kh·kw, oh·ow]`.
fn im2col(x: &[f32], g: &Geom, col: &mut [f32]) {
    let npix = g.oh * g.ow;
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * npix..(row + 1) * npix];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `[c·kh·kw, oh·ow]` back into `[c, h, w]`.
fn col2im(col: &[f32], g: &Geom, x: &mut [f32]) {
    let npix = g.oh * g.ow;
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * npix..(row + 1) * npix];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst =
                        &mut x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn add_bias(out: &mut [f32], bias: &[f32], per_channel: usize) {
    for (chunk, &b) in out.chunks_exact_mut(per_channel).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad(g: &[f32], channels: usize, per_channel: usize) -> Vec<f32> {
    let mut gb = vec![0.0f64; channels];
    for (i, chunk) in g.chunks_exact(per_channel).enumerate() {
        gb[i % channels] += chunk.iter().map(|&v| v as f64).sum::<f64>();
    }
    gb.into_iter().map(|v| v as f32).collect()
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.numel() != channels {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: vec![channels],
                rhs: b.shape().to_vec(),
            });
        }
    }
    Ok(())
}

impl Tensor {
    /// Cross-correlation of `[B,C,H,W]` with `weight [O,C,kh,kw]`.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        if self.rank() != 4 || weight.rank() != 4 || self.dim(1) != weight.dim(1) {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be at least 1"));
        }
        let (b, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (o, kh, kw) = (weight.dim(0), weight.dim(2), weight.dim(3));
        check_bias("conv2d", bias, o)?;
        let (ph, pw) = (h + 2 * padding, w + 2 * padding);
        if ph < kh || pw < kw || (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(invalid(
                "conv2d",
                format!("non-integral output extent for input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"),
            ));
        }
        let g = Geom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad: padding,
            oh: (ph - kh) / stride + 1,
            ow: (pw - kw) / stride + 1,
        };
        let npix = g.oh * g.ow;
        let ck = c * kh * kw;
        let x = self.data();
        let wd = weight.data();
        let mut out = vec![0.0f32; b * o * npix];
        let mut col = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0f32; ck * npix]
        };
        for bi in 0..b {
            let xb = &x[bi * c * h * w..(bi + 1) * c * h * w];
            let colb: &[f32] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, &g, &mut col);
                &col
            };
            gemm_nn(
                o,
                npix,
                ck,
                wd,
                colb,
                &mut out[bi * o * npix..(bi + 1) * o * npix],
            );
        }
        if let Some(bias) = bias {
            add_bias(&mut out, bias.data(), npix);
        }

        let (x_c, w_c) = (self.clone(), weight.clone());
        let mut inputs = vec![self, weight];
        if let Some(bias) = bias {
            inputs.push(bias);
        }
        Tensor::from_op(
            "conv2d",
            vec![b, o, g.oh, g.ow],
            out,
            &inputs,
            move |gout, needs| {
                let x = x_c.data();
                let wd = w_c.data();
                let mut gx = needs[0].then(|| vec![0.0f32; b * c * h * w]);
                let mut gw = needs[1].then(|| vec![0.0f32; o * ck]);
                let mut col = vec![0.0f32; if g.is_pointwise() { 0 } else { ck * npix }];
                let mut gcol = vec![0.0f32; ck * npix];
                for bi in 0..b {
                    let gb = &gout[bi * o * npix..(bi + 1) * o * npix];
                    if let Some(gw) = gw.as_mut() {
                        let xb = &x[bi * c * h * w..(bi + 1) * c * h * w];
                        let colb: &[f32] = if g.is_pointwise() {
                            xb
                        } else {
                            im2col(xb, &g, &mut col);
                            &col
                        };
                        gemm_nt(o, ck, npix, gb, colb, gw);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let gxb = &mut gx[bi * c * h * w..(bi + 1) * c * h * w];
                        if g.is_pointwise() {
                            gemm_tn(ck, npix, o, wd, gb, gxb);
                        } else {
                            gcol.iter_mut().for_each(|v| *v = 0.0);
                            gemm_tn(ck, npix, o, wd, gb, &mut gcol);
                            col2im(&gcol, &g, gxb);
                        }
                    }
                }
                let mut grads = vec![gx, gw];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| bias_grad(gout, o, npix)));
                }
                grads
            },
        )
    }

    /// Transposed convolution of `[B,Cin,H,W]` with `weight [Cin,Cout,kh,kw]`.
    /// Output extent is `(H−1)·stride − 2·padding + kh + output_padding`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Tensor> {
        if self.rank() != 4 || weight.rank() != 4 || self.dim(1) != weight.dim(0) {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if stride == 0 || output_padding >= stride {
            return Err(invalid(
                "conv_transpose2d",
                format!("invalid stride {stride} / output padding {output_padding}"),
            ));
        }
        let (b, cin, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (cout, kh, kw) = (weight.dim(1), weight.dim(2), weight.dim(3));
        check_bias("conv_transpose2d", bias, cout)?;
        let full_h = (h - 1) * stride + kh + output_padding;
        let full_w = (w - 1) * stride + kw + output_padding;
        if full_h <= 2 * padding || full_w <= 2 * padding {
            return Err(invalid(
                "conv_transpose2d",
                "padding consumes the whole output",
            ));
        }
        let (oh, ow) = (full_h - 2 * padding, full_w - 2 * padding);
        // The output plays the role of conv2d's input: im2col over the output
        // geometry yields exactly `h·w` columns.
        let g = Geom {
            c: cout,
            h: oh,
            w: ow,
            kh,
            kw,
            stride,
            pad: padding,
            oh: h,
            ow: w,
        };
        let npix = h * w;
        let ck = cout * kh * kw;
        let x = self.data();
        let wd = weight.data();
        let mut out = vec![0.0f32; b * cout * oh * ow];
        let mut col = vec![0.0f32; ck * npix];
        for bi in 0..b {
            col.iter_mut().for_each(|v| *v = 0.0);
            gemm_tn(
                ck,
                npix,
                cin,
                wd,
                &x[bi * cin * npix..(bi + 1) * cin * npix],
                &mut col,
            );
            col2im(
                &col,
                &g,
                &mut out[bi * cout * oh * ow..(bi + 1) * cout * oh * ow],
            );
        }
        if let Some(bias) = bias {
            add_bias(&mut out, bias.data(), oh * ow);
        }

        let (x_c, w_c) = (self.clone(), weight.clone());
        let mut inputs = vec![self, weight];
        if let Some(bias) = bias {
            inputs.push(bias);
        }
        Tensor::from_op(
            "conv_transpose2d",
            vec![b, cout, oh, ow],
            out,
            &inputs,
            move |gout, needs| {
                let x = x_c.data();
                let wd = w_c.data();
                let mut gx = needs[0].then(|| vec![0.0f32; b * cin * npix]);
                let mut gw = needs[1].then(|| vec![0.0f32; cin * ck]);
                let mut gcol = vec![0.0f32; ck * npix];
                for bi in 0..b {
                    im2col(
                        &gout[bi * cout * oh * ow..(bi + 1) * cout * oh * ow],
                        &g,
                        &mut gcol,
                    );
                    if let Some(gx) = gx.as_mut() {
                        gemm_nn(
                            cin,
                            npix,
                            ck,
                            wd,
                            &gcol,
                            &mut gx[bi * cin * npix..(bi + 1) * cin * npix],
                        );
                    }
                    if let Some(gw) = gw.as_mut() {
                        gemm_nt(
                            cin,
                            ck,
                            npix,
                            &x[bi * cin * npix..(bi + 1) * cin * npix],
                            &gcol,
                            gw,
                        );
                    }
                }
                let mut grads = vec![gx, gw];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| bias_grad(gout, cout, oh * ow)));
                }
                grads
            },
        )
    }
}
