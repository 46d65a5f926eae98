//! Broadcasting helpers.

use crate::error::{Result, TensorError};

/// Broadcast shape under trailing-dimension alignment.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let db = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

pub fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// How the elements of an input map onto a broadcast output.
#[derive(Debug, Clone)]
pub(crate) enum BroadcastMap {
    /// Same number of elements, identity mapping.
    Same,
    /// Single element repeated everywhere.
    Scalar,
    /// Input equals a trailing suffix of the output: index = i % n.
    Suffix(usize),
    /// General strided mapping.
    Strided {
        out_shape: Vec<usize>,
        strides: Vec<usize>,
    },
}

impl BroadcastMap {
    pub(crate) fn new(input: &[usize], out: &[usize]) -> BroadcastMap {
        let n_in: usize = input.iter().product();
        let n_out: usize = out.iter().product();
        if n_in == n_out {
            return BroadcastMap::Same;
        }
        if n_in == 1 {
            return BroadcastMap::Scalar;
        }
        // Strip leading ones of the input, then check for a suffix match.
        let trimmed: Vec<usize> = input.iter().copied().skip_while(|&d| d == 1).collect();
        if trimmed.len() <= out.len() && out[out.len() - trimmed.len()..] == trimmed[..] {
            return BroadcastMap::Suffix(n_in);
        }
        let off = out.len() - input.len();
        let in_strides = contiguous_strides(input);
        let strides = (0..out.len())
            .map(|i| {
                if i < off || input[i - off] == 1 {
                    0
                } else {
                    in_strides[i - off]
                }
            })
            .collect();
        BroadcastMap::Strided {
            out_shape: out.to_vec(),
            strides,
        }
    }

    /// Input flat index for each output flat index, in order.
    pub(crate) fn indices(&self, n_out: usize) -> Vec<usize> {
        match self {
            BroadcastMap::Same => (0..n_out).collect(),
            BroadcastMap::Scalar => vec![0; n_out],
            BroadcastMap::Suffix(n) => (0..n_out).map(|i| i % n).collect(),
            BroadcastMap::Strided { out_shape, strides } => {
                let mut idx = Vec::with_capacity(n_out);
                let rank = out_shape.len();
                let mut counter = vec![0usize; rank];
                let mut pos = 0usize;
                for _ in 0..n_out {
                    idx.push(pos);
                    for d in (0..rank).rev() {
                        counter[d] += 1;
                        pos += strides[d];
                        if counter[d] < out_shape[d] {
                            break;
                        }
                        pos -= strides[d] * out_shape[d];
                        counter[d] = 0;
                    }
                }
                idx
            }
        }
    }

    /// Sums an output-shaped gradient back down to the input's element count.
    pub(crate) fn reduce(&self, g: &[f32], n_in: usize) -> Vec<f32> {
        match self {
            BroadcastMap::Same => g.to_vec(),
            BroadcastMap::Scalar => vec![g.iter().map(|&v| v as f64).sum::<f64>() as f32],
            BroadcastMap::Suffix(n) => {
                let mut out = vec![0.0f32; *n];
                for chunk in g.chunks_exact(*n) {
                    out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
                }
                out
            }
            BroadcastMap::Strided { .. } => {
                let mut out = vec![0.0f32; n_in];
                for (i, src) in self.indices(g.len()).into_iter().enumerate() {
                    out[src] += g[i];
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape("t", &[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(
            broadcast_shape("t", &[2, 1, 4], &[3, 1]).unwrap(),
            vec![2, 3, 4]
        );
        assert!(broadcast_shape("t", &[2, 3], &[2]).is_err());
    }

    #[test]
    fn strided_indices_match_manual_expansion() {
        let map = BroadcastMap::new(&[2, 1], &[2, 3]);
        assert_eq!(map.indices(6), vec![0, 0, 0, 1, 1, 1]);
        let map = BroadcastMap::new(&[1, 3], &[2, 3]);
        assert_eq!(map.indices(6), vec![0, 1, 2, 0, 1, 2]);
    }
}
