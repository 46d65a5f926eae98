//! Central finite-difference checks of reverse-mode gradients.
//!
//! The scalar probed is `Σ wᵢ·fᵢ(x)` with fixed pseudo-random weights,
//! accumulated in f64, so every output element contributes.

use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone)]
pub struct GradReport {
    pub input: usize,
    /// `‖g_ad − g_fd‖ / ‖g_fd‖` over the checked entries.
    pub rel_error: f64,
    pub fd_norm: f64,
    pub checked: usize,
}

fn weights(n: usize, seed: u64) -> Vec<f32> {
    // Small LCG so the probe does not depend on any crate RNG stream.
    let mut s = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
        })
        .collect()
}

fn probe(out: &Tensor, w: &[f32]) -> f64 {
    out.data()
        .iter()
        .zip(w)
        .map(|(&o, &w)| o as f64 * w as f64)
        .sum()
}

/// Compares autodiff and central-difference gradients of `f` with respect to
/// each input. `skip(input, index)` excludes entries sitting on known kinks.
pub fn check_gradients(
    f: impl Fn(&[Tensor]) -> Result<Tensor>,
    inputs: &[Tensor],
    eps: f32,
    skip: impl Fn(usize, usize) -> bool,
) -> Result<Vec<GradReport>> {
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.detach().requires_grad()).collect();
    let out = f(&leaves)?;
    let w = weights(out.numel(), 17);
    let wt = Tensor::from_vec(w.clone(), out.shape())?;
    out.mul(&wt)?.sum()?.backward()?;

    let mut reports = Vec::new();
    for (k, leaf) in leaves.iter().enumerate() {
        let ad = leaf.grad_vec().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let base = inputs[k].to_vec();
        let (mut diff2, mut fd2, mut checked) = (0.0f64, 0.0f64, 0usize);
        for i in 0..base.len() {
            if skip(k, i) {
                continue;
            }
            let eval = |delta: f32| -> Result<f64> {
                let mut v = base.clone();
                v[i] += delta;
                let mut args: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
                args[k] = Tensor::from_vec(v, inputs[k].shape())?;
                let o = no_grad(|| f(&args))?;
                Ok(probe(&o, &w))
            };
            let fd = (eval(eps)? - eval(-eps)?) / (2.0 * eps as f64);
            diff2 += (fd - ad[i] as f64).powi(2);
            fd2 += fd * fd;
            checked += 1;
        }
        let fd_norm = fd2.sqrt();
        reports.push(GradReport {
            input: k,
            rel_error: diff2.sqrt() / fd_norm.max(1e-12),
            fd_norm,
            checked,
        });
    }
    Ok(reports)
}
