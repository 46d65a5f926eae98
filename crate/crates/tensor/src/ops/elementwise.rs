use crate::error::{Result, TensorError};
use crate::shape::{broadcast_shape, BroadcastMap};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
            Binary::Min => "minimum",
            Binary::Max => "maximum",
        }
    }

    #[inline(always)]
    fn apply(self, x: f32, y: f32) -> f32 {
        match self {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
            Binary::Min => x.min(y),
            Binary::Max => x.max(y),
        }
    }
}

fn gather(data: &[f32], idx: &Option<Vec<usize>>, i: usize) -> f32 {
    match idx {
        Some(idx) => data[idx[i]],
        None => data[i],
    }
}

fn binary(op: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let name = op.name();
    let out_shape = broadcast_shape(name, a.shape(), b.shape())?;
    let n: usize = out_shape.iter().product();
    let map_a = BroadcastMap::new(a.shape(), &out_shape);
    let map_b = BroadcastMap::new(b.shape(), &out_shape);
    if op == Binary::Div {
        if let Some(i) = b.data().iter().position(|&v| v == 0.0) {
            return Err(TensorError::Domain {
                op: name,
                msg: format!("division by zero at divisor index {i}"),
            });
        }
    }
    let ad = a.data();
    let bd = b.data();
    let data: Vec<f32> = match (&map_a, &map_b) {
        (BroadcastMap::Same, BroadcastMap::Same) => {
            ad.iter().zip(bd).map(|(&x, &y)| op.apply(x, y)).collect()
        }
        (BroadcastMap::Same, BroadcastMap::Scalar) => {
            let y = bd[0];
            ad.iter().map(|&x| op.apply(x, y)).collect()
        }
        (BroadcastMap::Scalar, BroadcastMap::Same) => {
            let x = ad[0];
            bd.iter().map(|&y| op.apply(x, y)).collect()
        }
        (BroadcastMap::Same, BroadcastMap::Suffix(m)) => {
            let mut out = Vec::with_capacity(n);
            for chunk in ad.chunks_exact(*m) {
                out.extend(chunk.iter().zip(bd).map(|(&x, &y)| op.apply(x, y)));
            }
            out
        }
        _ => {
            let ia = (!matches!(map_a, BroadcastMap::Same)).then(|| map_a.indices(n));
            let ib = (!matches!(map_b, BroadcastMap::Same)).then(|| map_b.indices(n));
            (0..n)
                .map(|i| op.apply(gather(ad, &ia, i), gather(bd, &ib, i)))
                .collect()
        }
    };

    let a_c = a.clone();
    let b_c = b.clone();
    let (na, nb) = (a.numel(), b.numel());
    Tensor::from_op(name, out_shape, data, &[a, b], move |g, needs| {
        let n = g.len();
        let needs_expand = !matches!(op, Binary::Add | Binary::Sub);
        let ia = (needs_expand && !matches!(map_a, BroadcastMap::Same)).then(|| map_a.indices(n));
        let ib = (needs_expand && !matches!(map_b, BroadcastMap::Same)).then(|| map_b.indices(n));
        let ad = a_c.data();
        let bd = b_c.data();
        let (ga_full, gb_full): (Option<Vec<f32>>, Option<Vec<f32>>) = match op {
            Binary::Add => (needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())),
            Binary::Sub => (
                needs[0].then(|| g.to_vec()),
                needs[1].then(|| g.iter().map(|v| -v).collect()),
            ),
            Binary::Mul => (
                needs[0].then(|| (0..n).map(|i| g[i] * gather(bd, &ib, i)).collect()),
                needs[1].then(|| (0..n).map(|i| g[i] * gather(ad, &ia, i)).collect()),
            ),
            Binary::Div => (
                needs[0].then(|| (0..n).map(|i| g[i] / gather(bd, &ib, i)).collect()),
                needs[1].then(|| {
                    (0..n)
                        .map(|i| {
                            let y = gather(bd, &ib, i);
                            -g[i] * gather(ad, &ia, i) / (y * y)
                        })
                        .collect()
                }),
            ),
            // Ties route the gradient to the first operand.
            Binary::Min | Binary::Max => {
                let pick_a = |i: usize| {
                    let x = gather(ad, &ia, i);
                    let y = gather(bd, &ib, i);
                    if op == Binary::Min {
                        x <= y
                    } else {
                        x >= y
                    }
                };
                (
                    needs[0].then(|| (0..n).map(|i| if pick_a(i) { g[i] } else { 0.0 }).collect()),
                    needs[1].then(|| (0..n).map(|i| if pick_a(i) { 0.0 } else { g[i] }).collect()),
                )
            }
        };
        vec![
            ga_full.map(|full| map_a.reduce(&full, na)),
            gb_full.map(|full| map_b.reduce(&full, nb)),
        ]
    })
}

/// Applies `f` elementwise; `df(x)` is the local derivative at input `x`.
fn unary(
    name: &'static str,
    a: &Tensor,
    f: impl Fn(f32) -> f32,
    df: impl Fn(f32) -> f32 + 'static,
) -> Result<Tensor> {
    let data: Vec<f32> = a.data().iter().map(|&x| f(x)).collect();
    let a_c = a.clone();
    Tensor::from_op(name, a.shape().to_vec(), data, &[a], move |g, _| {
        vec![Some(
            g.iter().zip(a_c.data()).map(|(g, &x)| g * df(x)).collect(),
        )]
    })
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Div, self, other)
    }

    /// Elementwise minimum. At ties the gradient goes to `self`.
    pub fn minimum(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Min, self, other)
    }

    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Max, self, other)
    }

    pub fn add_scalar(&self, s: f32) -> Result<Tensor> {
        unary("add_scalar", self, |x| x + s, |_| 1.0)
    }

    pub fn mul_scalar(&self, s: f32) -> Result<Tensor> {
        unary("mul_scalar", self, |x| x * s, move |_| s)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.mul_scalar(-1.0)
    }

    /// `s - self`
    pub fn rsub_scalar(&self, s: f32) -> Result<Tensor> {
        unary("rsub_scalar", self, |x| s - x, |_| -1.0)
    }

    /// Subgradient at 0 is 0.
    pub fn abs(&self) -> Result<Tensor> {
        unary("abs", self, f32::abs, |x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn exp(&self) -> Result<Tensor> {
        unary("exp", self, f32::exp, f32::exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(i) = self.data().iter().position(|&v| v <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                msg: format!("log of non-positive value {} at index {i}", self.data()[i]),
            });
        }
        unary("log", self, f32::ln, |x| 1.0 / x)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(i) = self.data().iter().position(|&v| v < 0.0) {
            return Err(TensorError::Domain {
                op: "sqrt",
                msg: format!("sqrt of negative value at index {i}"),
            });
        }
        unary("sqrt", self, f32::sqrt, |x| 0.5 / x.sqrt())
    }

    /// `self^p` for a constant exponent.
    pub fn pow(&self, p: f32) -> Result<Tensor> {
        if p.fract() != 0.0 {
            if let Some(i) = self.data().iter().position(|&v| v < 0.0) {
                return Err(TensorError::Domain {
                    op: "pow",
                    msg: format!("non-integer power of negative value at index {i}"),
                });
            }
        }
        unary(
            "pow",
            self,
            move |x| x.powf(p),
            move |x| p * x.powf(p - 1.0),
        )
    }

    pub fn relu(&self) -> Result<Tensor> {
        unary(
            "relu",
            self,
            |x| x.max(0.0),
            |x| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Tensor> {
        unary(
            "gelu",
            self,
            |x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
            |x| {
                let inner = GELU_C * (x + 0.044715 * x * x * x);
                let t = inner.tanh();
                let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            },
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        unary("sigmoid", self, sigmoid, |x| {
            let y = sigmoid(x);
            y * (1.0 - y)
        })
    }

    /// Clamps into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&self, lo: f32, hi: f32) -> Result<Tensor> {
        if lo > hi {
            return Err(crate::error::invalid("clamp", format!("lo {lo} > hi {hi}")));
        }
        unary(
            "clamp",
            self,
            move |x| x.clamp(lo, hi),
            move |x| if x >= lo && x <= hi { 1.0 } else { 0.0 },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32], s: &[usize]) -> Tensor {
        Tensor::from_slice(v, s).unwrap()
    }

    #[test]
    fn add_and_min_examples() {
        assert_eq!(
            t(&[1., 2.], &[2]).add(&t(&[3., 4.], &[2])).unwrap().data(),
            &[4., 6.]
        );
        assert_eq!(
            t(&[0.5, 0.2], &[2])
                .minimum(&t(&[0.3, 0.4], &[2]))
                .unwrap()
                .data(),
            &[0.3, 0.2]
        );
    }

    #[test]
    fn square_sum_gradient() {
        let x = t(&[1., 2., 3.], &[3]).requires_grad();
        x.mul(&x).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![2., 4., 6.]);
    }

    #[test]
    fn div_by_zero_and_log_domain_are_errors() {
        let a = t(&[1., 2.], &[2]);
        assert!(matches!(
            a.div(&t(&[1., 0.], &[2])),
            Err(TensorError::Domain { .. })
        ));
        assert!(matches!(
            t(&[1., 0.], &[2]).log(),
            Err(TensorError::Domain { .. })
        ));
        assert!(matches!(
            t(&[1., -1.], &[2]).log(),
            Err(TensorError::Domain { .. })
        ));
    }

    #[test]
    fn overflow_is_reported() {
        let a = t(&[100.0], &[1]);
        assert!(matches!(a.exp(), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn shape_mismatch_is_descriptive() {
        let err = t(&[1., 2., 3.], &[3]).add(&t(&[1., 2.], &[2])).unwrap_err();
        assert!(err.to_string().contains("[3]"), "{err}");
    }

    #[test]
    fn broadcast_bias_gradient_sums_rows() {
        let x = t(&[1., 2., 3., 4., 5., 6.], &[2, 3]).requires_grad();
        let b = t(&[0.1, 0.2, 0.3], &[3]).requires_grad();
        x.add(&b).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(b.grad_vec().unwrap(), vec![2., 2., 2.]);
        assert_eq!(x.grad_vec().unwrap(), vec![1.; 6]);
    }

    #[test]
    fn column_broadcast_mul() {
        let a = t(&[1., 2.], &[2, 1]).requires_grad();
        let b = t(&[1., 2., 3., 4., 5., 6.], &[2, 3]).requires_grad();
        let y = a.mul(&b).unwrap();
        assert_eq!(y.data(), &[1., 2., 3., 8., 10., 12.]);
        y.sum().unwrap().backward().unwrap();
        assert_eq!(a.grad_vec().unwrap(), vec![6., 15.]);
        assert_eq!(b.grad_vec().unwrap(), vec![1., 1., 1., 2., 2., 2.]);
    }
}
