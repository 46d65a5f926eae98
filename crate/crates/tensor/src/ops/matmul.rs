use crate::error::{Result, TensorError};
use crate::shape::{broadcast_shape, BroadcastMap};
use crate::tensor::Tensor;

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
pub(crate) fn gemm_nn(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    const KB: usize = 128;
    for k0 in (0..k).step_by(KB) {
        let k1 = (k0 + KB).min(k);
        for i in 0..m {
            let crow = &mut c[i * n..(i + 1) * n];
            let arow = &a[i * k..(i + 1) * k];
            let mut p = k0;
            while p + 4 <= k1 {
                let (a0, a1, a2, a3) = (arow[p], arow[p + 1], arow[p + 2], arow[p + 3]);
                let b0 = &b[p * n..(p + 1) * n];
                let b1 = &b[(p + 1) * n..(p + 2) * n];
                let b2 = &b[(p + 2) * n..(p + 3) * n];
                let b3 = &b[(p + 3) * n..(p + 4) * n];
                for j in 0..n {
                    crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
                }
                p += 4;
            }
            while p < k1 {
                let av = arow[p];
                if av != 0.0 {
                    let brow = &b[p * n..(p + 1) * n];
                    crow.iter_mut().zip(brow).for_each(|(c, &b)| *c += av * b);
                }
                p += 1;
            }
        }
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 16];
    let chunks = a.len() / 16;
    for c in 0..chunks {
        let aa = &a[c * 16..c * 16 + 16];
        let bb = &b[c * 16..c * 16 + 16];
        for l in 0..16 {
            acc[l] += aa[l] * bb[l];
        }
    }
    let mut s = 0.0f32;
    for l in 0..16 {
        s += acc[l];
    }
    for i in chunks * 16..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`.
pub(crate) fn gemm_nt(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`.
pub(crate) fn gemm_tn(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        let arow = &a[p * m..(p + 1) * m];
        for i in 0..m {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(c, &b)| *c += av * b);
        }
    }
}

impl Tensor {
    /// Batched matrix product over the last two axes; leading axes
    /// broadcast.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() < 2 || other.rank() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (ra, rb) = (self.rank(), other.rank());
        let (m, k) = (self.dim(ra - 2), self.dim(ra - 1));
        let (k2, n) = (other.dim(rb - 2), other.dim(rb - 1));
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let batch_a = &self.shape()[..ra - 2];
        let batch_b = &other.shape()[..rb - 2];
        let batch = broadcast_shape("matmul", batch_a, batch_b)?;
        let nb: usize = batch.iter().product();
        let ia =
            BroadcastMap::new(if batch_a.is_empty() { &[1] } else { batch_a }, &batch).indices(nb);
        let ib =
            BroadcastMap::new(if batch_b.is_empty() { &[1] } else { batch_b }, &batch).indices(nb);

        let ad = self.data();
        let bd = other.data();
        let mut out = vec![0.0f32; nb * m * n];
        for bi in 0..nb {
            gemm_nn(
                m,
                n,
                k,
                &ad[ia[bi] * m * k..(ia[bi] + 1) * m * k],
                &bd[ib[bi] * k * n..(ib[bi] + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let mut shape = batch;
        shape.push(m);
        shape.push(n);
        let (a_c, b_c) = (self.clone(), other.clone());
        Tensor::from_op("matmul", shape, out, &[self, other], move |g, needs| {
            let ad = a_c.data();
            let bd = b_c.data();
            let ga = needs[0].then(|| {
                let mut ga = vec![0.0f32; a_c.numel()];
                for bi in 0..nb {
                    gemm_nt(
                        m,
                        k,
                        n,
                        &g[bi * m * n..(bi + 1) * m * n],
                        &bd[ib[bi] * k * n..(ib[bi] + 1) * k * n],
                        &mut ga[ia[bi] * m * k..(ia[bi] + 1) * m * k],
                    );
                }
                ga
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![0.0f32; b_c.numel()];
                for bi in 0..nb {
                    gemm_tn(
                        k,
                        n,
                        m,
                        &ad[ia[bi] * m * k..(ia[bi] + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &mut gb[ib[bi] * k * n..(ib[bi] + 1) * k * n],
                    );
                }
                gb
            });
            vec![ga, gb]
        })
    }
}
