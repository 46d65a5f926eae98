//! Reshape, permute, slicing, concatenation, padding and gathers.

use crate::error::{invalid, Result, TensorError};
use crate::ops::reduce::split_dim;
use crate::shape::contiguous_strides;
use crate::tensor::{numel, Tensor};

fn check_dim(op: &'static str, t: &Tensor, dim: usize) -> Result<()> {
    if dim >= t.rank() {
        return Err(invalid(
            op,
            format!("axis {dim} out of range for shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// Gathers `src` (with `shape`) into the order given by `perm`.
fn permute_data(src: &[f32], shape: &[usize], perm: &[usize]) -> Vec<f32> {
    let rank = shape.len();
    let in_strides = contiguous_strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    if rank == 0 {
        return src.to_vec();
    }
    // Innermost loop over the last output axis.
    let last = rank - 1;
    let inner_n = out_shape[last];
    let inner_stride = strides[last];
    let mut counter = vec![0usize; rank];
    let mut base = 0usize;
    while out.len() < n {
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner_n]);
        } else {
            out.extend((0..inner_n).map(|k| src[base + k * inner_stride]));
        }
        let mut d = last;
        loop {
            if d == 0 {
                break;
            }
            d -= 1;
            counter[d] += 1;
            base += strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            base -= strides[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    out
}

impl Tensor {
    /// Reinterprets the element order under a new shape. One extent may be
    /// given as `usize::MAX` to be inferred.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let mut shape = shape.to_vec();
        if let Some(pos) = shape.iter().position(|&d| d == usize::MAX) {
            let known: usize = shape.iter().filter(|&&d| d != usize::MAX).product();
            if known == 0 || !self.numel().is_multiple_of(known) {
                return Err(TensorError::ShapeMismatch {
                    op: "reshape",
                    lhs: self.shape().to_vec(),
                    rhs: shape,
                });
            }
            shape[pos] = self.numel() / known;
        }
        if numel(&shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape,
            });
        }
        Ok(Tensor::from_op_shared(
            "reshape",
            shape,
            self.storage(),
            &[self],
            |g, _| vec![Some(g.to_vec())],
        ))
    }

    pub fn unsqueeze(&self, dim: usize) -> Result<Tensor> {
        let mut shape = self.shape().to_vec();
        if dim > shape.len() {
            return Err(invalid("unsqueeze", format!("axis {dim} out of range")));
        }
        shape.insert(dim, 1);
        self.reshape(&shape)
    }

    pub fn flatten(&self) -> Result<Tensor> {
        self.reshape(&[self.numel()])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
        {
            return Err(invalid(
                "permute",
                format!("{perm:?} is not a permutation of rank {rank}"),
            ));
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return self.reshape(self.shape());
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.dim(p)).collect();
        let data = permute_data(self.data(), self.shape(), perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out_shape_c = out_shape.clone();
        Tensor::from_op("permute", out_shape, data, &[self], move |g, _| {
            vec![Some(permute_data(g, &out_shape_c, &inverse))]
        })
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        check_dim("transpose", self, a.max(b))?;
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Slice `[start, start + len)` along `dim`.
    pub fn narrow(&self, dim: usize, start: usize, len: usize) -> Result<Tensor> {
        check_dim("narrow", self, dim)?;
        if len == 0 || start + len > self.dim(dim) {
            return Err(invalid(
                "narrow",
                format!(
                    "range {start}..{} exceeds extent {} of axis {dim}",
                    start + len,
                    self.dim(dim)
                ),
            ));
        }
        let (outer, n, inner) = split_dim(self.shape(), dim);
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[dim] = len;
        Tensor::from_op("narrow", shape, out, &[self], move |g, _| {
            let mut gx = vec![0.0f32; outer * n * inner];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                gx[base..base + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        })
    }

    /// Concatenates along `dim`; all other extents must agree.
    pub fn cat(tensors: &[Tensor], dim: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| invalid("cat", "no tensors"))?;
        check_dim("cat", first, dim)?;
        for t in &tensors[1..] {
            let ok = t.rank() == first.rank()
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == dim || a == b);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "cat",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_dim(first.shape(), dim);
        let extents: Vec<usize> = tensors.iter().map(|t| t.dim(dim)).collect();
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (t, &e) in tensors.iter().zip(&extents) {
                out.extend_from_slice(&t.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[dim] = total;
        let refs: Vec<&Tensor> = tensors.iter().collect();
        Tensor::from_op("cat", shape, out, &refs, move |g, needs| {
            let mut grads: Vec<Option<Vec<f32>>> = needs
                .iter()
                .zip(&extents)
                .map(|(&need, &e)| need.then(|| Vec::with_capacity(outer * e * inner)))
                .collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gslot, &e) in grads.iter_mut().zip(&extents) {
                    if let Some(gv) = gslot {
                        gv.extend_from_slice(&g[off..off + e * inner]);
                    }
                    off += e * inner;
                }
            }
            grads
        })
    }

    /// Zero-pads `before`/`after` elements on axis `dim`.
    pub fn pad(&self, dim: usize, before: usize, after: usize) -> Result<Tensor> {
        check_dim("pad", self, dim)?;
        if before == 0 && after == 0 {
            return self.reshape(self.shape());
        }
        let (outer, n, inner) = split_dim(self.shape(), dim);
        let m = n + before + after;
        let x = self.data();
        let mut out = vec![0.0f32; outer * m * inner];
        for o in 0..outer {
            let dst = (o * m + before) * inner;
            out[dst..dst + n * inner].copy_from_slice(&x[o * n * inner..(o + 1) * n * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[dim] = m;
        Tensor::from_op("pad", shape, out, &[self], move |g, _| {
            let mut gx = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                let src = (o * m + before) * inner;
                gx.extend_from_slice(&g[src..src + n * inner]);
            }
            vec![Some(gx)]
        })
    }

    /// Picks entries `indices` along `dim`. Repeated indices accumulate
    /// gradient.
    pub fn index_select(&self, dim: usize, indices: &[usize]) -> Result<Tensor> {
        check_dim("index_select", self, dim)?;
        let (outer, n, inner) = split_dim(self.shape(), dim);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(invalid(
                "index_select",
                format!("index {bad} out of range for extent {n}"),
            ));
        }
        if indices.is_empty() {
            return Err(invalid("index_select", "empty index list"));
        }
        let x = self.data();
        let m = indices.len();
        let mut out = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * n + i) * inner;
                out.extend_from_slice(&x[base..base + inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[dim] = m;
        let indices = indices.to_vec();
        Tensor::from_op("index_select", shape, out, &[self], move |g, _| {
            let mut gx = vec![0.0f32; outer * n * inner];
            for o in 0..outer {
                for (j, &i) in indices.iter().enumerate() {
                    let dst = (o * n + i) * inner;
                    let src = (o * m + j) * inner;
                    gx[dst..dst + inner]
                        .iter_mut()
                        .zip(&g[src..src + inner])
                        .for_each(|(d, s)| *d += s);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Cyclic shift by `shift` along `dim` (positive moves entries toward
    /// higher indices).
    pub fn roll(&self, dim: usize, shift: isize) -> Result<Tensor> {
        check_dim("roll", self, dim)?;
        let n = self.dim(dim) as isize;
        let idx: Vec<usize> = (0..n).map(|i| (i - shift).rem_euclid(n) as usize).collect();
        self.index_select(dim, &idx)
    }
}
