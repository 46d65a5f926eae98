use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Splits `shape` around `dim` into (outer, extent, inner) element counts.
pub(crate) fn split_dim(shape: &[usize], dim: usize) -> (usize, usize, usize) {
    let outer = shape[..dim].iter().product();
    let inner = shape[dim + 1..].iter().product();
    (outer, shape[dim], inner)
}

impl Tensor {
    /// Sum of all elements, accumulated in f64. Result shape `[1]`.
    pub fn sum(&self) -> Result<Tensor> {
        let s: f64 = self.data().iter().map(|&v| v as f64).sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![1], vec![s as f32], &[self], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        let s: f64 = self.data().iter().map(|&v| v as f64).sum();
        let inv = 1.0 / n as f32;
        Tensor::from_op(
            "mean",
            vec![1],
            vec![(s / n as f64) as f32],
            &[self],
            move |g, _| vec![Some(vec![g[0] * inv; n])],
        )
    }

    /// Sums along `dim`. With `keepdim` the axis stays with extent 1.
    pub fn sum_dim(&self, dim: usize, keepdim: bool) -> Result<Tensor> {
        self.reduce_dim("sum_dim", dim, keepdim, 1.0)
    }

    pub fn mean_dim(&self, dim: usize, keepdim: bool) -> Result<Tensor> {
        if dim >= self.rank() {
            return Err(invalid(
                "mean_dim",
                format!("axis {dim} out of range for rank {}", self.rank()),
            ));
        }
        let scale = 1.0 / self.dim(dim) as f32;
        self.reduce_dim("mean_dim", dim, keepdim, scale)
    }

    fn reduce_dim(
        &self,
        name: &'static str,
        dim: usize,
        keepdim: bool,
        scale: f32,
    ) -> Result<Tensor> {
        if dim >= self.rank() {
            return Err(invalid(
                name,
                format!("axis {dim} out of range for rank {}", self.rank()),
            ));
        }
        let (outer, n, inner) = split_dim(self.shape(), dim);
        let x = self.data();
        let mut out = vec![0.0f32; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for k in 0..n {
                let src = &x[(o * n + k) * inner..(o * n + k + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d *= scale);
        }
        let mut shape = self.shape().to_vec();
        if keepdim || shape.len() == 1 {
            shape[dim] = 1;
        } else {
            shape.remove(dim);
        }
        Tensor::from_op(name, shape, out, &[self], move |g, _| {
            let mut gx = vec![0.0f32; outer * n * inner];
            for o in 0..outer {
                let src = &g[o * inner..(o + 1) * inner];
                for k in 0..n {
                    let dst = &mut gx[(o * n + k) * inner..(o * n + k + 1) * inner];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d = s * scale);
                }
            }
            vec![Some(gx)]
        })
    }
}
