//! Self-supervised objective: SSIM + L1 photometric error, per-pixel
//! minimum reprojection, auto-masking and edge-aware smoothness.

use depthcast_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    build_warp_grid, depth_from_activation, warp_image, CameraIntrinsics, DepthRange,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the L1 term; SSIM gets `1 − alpha`.
    pub alpha: f32,
    /// Smoothness weight.
    pub smoothness: f32,
    pub c1: f32,
    pub c2: f32,
    /// Divide disparity by its spatial mean before the smoothness term.
    pub normalize_smoothness: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.15,
            smoothness: 0.001,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
            normalize_smoothness: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha)
            || !(self.smoothness >= 0.0)
            || !(self.c1 > 0.0)
            || !(self.c2 > 0.0)
        {
            return Err(Error::Config(format!(
                "loss weights need alpha in [0,1], smoothness >= 0, c1, c2 > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Invalid(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Per-pixel, per-channel `(1 − SSIM) / 2` over 3×3 box windows, clamped
/// to `[0, 1]`.
pub fn ssim_dissimilarity(x: &Tensor, y: &Tensor, c1: f32, c2: f32) -> Result<Tensor> {
    same_shape("ssim", x, y)?;
    let mu_x = x.avg_pool3x3()?;
    let mu_y = y.avg_pool3x3()?;
    let mu_x2 = mu_x.mul(&mu_x)?;
    let mu_y2 = mu_y.mul(&mu_y)?;
    let mu_xy = mu_x.mul(&mu_y)?;
    let sig_x = x.mul(x)?.avg_pool3x3()?.sub(&mu_x2)?;
    let sig_y = y.mul(y)?.avg_pool3x3()?.sub(&mu_y2)?;
    let sig_xy = x.mul(y)?.avg_pool3x3()?.sub(&mu_xy)?;
    let num = mu_xy
        .mul_scalar(2.0)?
        .add_scalar(c1)?
        .mul(&sig_xy.mul_scalar(2.0)?.add_scalar(c2)?)?;
    let den = mu_x2
        .add(&mu_y2)?
        .add_scalar(c1)?
        .mul(&sig_x.add(&sig_y)?.add_scalar(c2)?)?;
    Ok(num
        .div(&den)?
        .rsub_scalar(1.0)?
        .mul_scalar(0.5)?
        .clamp(0.0, 1.0)?)
}

/// `(1 − α)·SSIM-dissimilarity + α·|x − y|`, averaged over channels:
/// `[B,C,H,W] → [B,1,H,W]`.
pub fn photometric_error(target: &Tensor, pred: &Tensor, w: &LossWeights) -> Result<Tensor> {
    same_shape("photometric_error", target, pred)?;
    let l1 = target.sub(pred)?.abs()?.mean_dim(1, true)?;
    if w.alpha >= 1.0 {
        return Ok(l1);
    }
    let ssim = ssim_dissimilarity(target, pred, w.c1, w.c2)?.mean_dim(1, true)?;
    Ok(ssim
        .mul_scalar(1.0 - w.alpha)?
        .add(&l1.mul_scalar(w.alpha)?)?)
}

/// Elementwise minimum over the two source frames.
pub fn min_reprojection(pe_prev: &Tensor, pe_next: &Tensor) -> Result<Tensor> {
    same_shape("min_reprojection", pe_prev, pe_next)?;
    Ok(pe_prev.minimum(pe_next)?)
}

/// `μ = [min warped pe < min identity pe]`, strict, as a constant tensor.
pub fn auto_mask_from_errors(min_warped: &Tensor, min_identity: &Tensor) -> Result<Tensor> {
    same_shape("auto_mask", min_warped, min_identity)?;
    let m = min_warped
        .data()
        .iter()
        .zip(min_identity.data())
        .map(|(a, b)| if a < b { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(m, min_warped.shape())?)
}

/// Auto-mask from images: warped and unwarped `[prev, next]` sources.
pub fn auto_mask(
    target: &Tensor,
    warped: [&Tensor; 2],
    unwarped: [&Tensor; 2],
    w: &LossWeights,
) -> Result<Tensor> {
    let pw = min_reprojection(
        &photometric_error(target, warped[0], w)?,
        &photometric_error(target, warped[1], w)?,
    )?;
    let pi = min_reprojection(
        &photometric_error(target, unwarped[0], w)?,
        &photometric_error(target, unwarped[1], w)?,
    )?;
    auto_mask_from_errors(&pw, &pi)
}

fn dx(t: &Tensor) -> Result<Tensor> {
    let w = t.dim(3);
    Ok(t.narrow(3, 1, w - 1)?.sub(&t.narrow(3, 0, w - 1)?)?)
}

fn dy(t: &Tensor) -> Result<Tensor> {
    let h = t.dim(2);
    Ok(t.narrow(2, 1, h - 1)?.sub(&t.narrow(2, 0, h - 1)?)?)
}

/// Edge-aware smoothness of `disp` (`[B,1,H,W]`) guided by `image`
/// (`[B,C,H,W]`): mean of `|∂x d|·e^{−|∂x I|}` plus mean of the y term.
pub fn smoothness(disp: &Tensor, image: &Tensor, normalize: bool) -> Result<Tensor> {
    if disp.rank() != 4
        || image.rank() != 4
        || disp.shape()[2..] != image.shape()[2..]
        || disp.dim(0) != image.dim(0)
    {
        return Err(Error::Invalid(format!(
            "smoothness: disparity {:?} and image {:?} must share batch and spatial extents",
            disp.shape(),
            image.shape()
        )));
    }
    let d = if normalize {
        let mean = disp.mean_dim(3, true)?.mean_dim(2, true)?;
        disp.div(&mean.add_scalar(1e-7)?)?
    } else {
        disp.clone()
    };
    let (h, w) = (d.dim(2), d.dim(3));
    let mut total = Tensor::zeros(&[1]);
    if w > 1 {
        let wx = dx(image)?.abs()?.mean_dim(1, true)?.neg()?.exp()?;
        total = total.add(&dx(&d)?.abs()?.mul(&wx)?.mean()?)?;
    }
    if h > 1 {
        let wy = dy(image)?.abs()?.mean_dim(1, true)?.neg()?.exp()?;
        total = total.add(&dy(&d)?.abs()?.mul(&wy)?.mean()?)?;
    }
    Ok(total)
}

/// Rigid transform `T_tgt→src` as `[B,3,3]` rotation and `[B,3]` translation.
#[derive(Debug, Clone)]
pub struct PoseBatch {
    pub rotation: Tensor,
    pub translation: Tensor,
}

/// Everything needed to score one target frame.
#[derive(Debug, Clone)]
pub struct TargetInputs {
    pub horizon: usize,
    /// `[B,3,H,W]` frames at tgt−1, tgt, tgt+1.
    pub prev: Tensor,
    pub target: Tensor,
    pub next: Tensor,
    /// Sigmoid disparities, finest first.
    pub disparities: Vec<Tensor>,
    /// `T_tgt→tgt−1` and `T_tgt→tgt+1`.
    pub to_prev: PoseBatch,
    pub to_next: PoseBatch,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f32,
    pub photometric: f32,
    /// Weighted smoothness contribution.
    pub smoothness: f32,
    /// Fraction of pixels kept by the auto-mask, over all targets and
    /// scales.
    pub masked_fraction: f32,
}

#[derive(Debug)]
pub struct LossOutput {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
    /// Per target, the finest-scale auto-mask `[B,1,H,W]`.
    pub masks: Vec<Tensor>,
}

/// Per-pixel photometric error of one source after warping, with invalid
/// reprojections replaced by the unwarped error.
fn warped_error(
    target: &Tensor,
    src: &Tensor,
    depth: &Tensor,
    pose: &PoseBatch,
    k: &CameraIntrinsics,
    identity: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    let grid = build_warp_grid(depth, k, &pose.rotation, &pose.translation)?;
    let warped = warp_image(src, &grid.grid)?;
    let pe = photometric_error(target, &warped, w)?;
    let valid = grid.valid;
    Ok(pe
        .mul(&valid)?
        .add(&identity.mul(&valid.rsub_scalar(1.0)?)?)?)
}

/// Total loss summed over targets and scales. The photometric term of
/// each (target, scale) is the mean of the minimum reprojection error over
/// auto-masked pixels of the whole batch.
pub fn total_loss(
    targets: &[TargetInputs],
    k: &CameraIntrinsics,
    range: DepthRange,
    w: &LossWeights,
) -> Result<LossOutput> {
    w.validate()?;
    if targets.is_empty() {
        return Err(Error::Invalid(
            "total_loss needs at least one target".into(),
        ));
    }
    let mut total = Tensor::zeros(&[1]);
    let (mut ph_sum, mut sm_sum, mut kept, mut pixels) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    let mut masks = Vec::with_capacity(targets.len());
    for t in targets {
        same_shape("total_loss prev", &t.prev, &t.target)?;
        same_shape("total_loss next", &t.next, &t.target)?;
        if t.disparities.is_empty() {
            return Err(Error::Invalid(format!(
                "target {} has no disparity maps",
                t.horizon
            )));
        }
        let (h, wd) = (t.target.dim(2), t.target.dim(3));
        let id_prev = photometric_error(&t.target, &t.prev, w)?;
        let id_next = photometric_error(&t.target, &t.next, w)?;
        let id_min = min_reprojection(&id_prev, &id_next)?;
        for (l, disp) in t.disparities.iter().enumerate() {
            let sigma = if disp.dim(2) == h && disp.dim(3) == wd {
                disp.clone()
            } else {
                disp.resize_bilinear(h, wd)?
            };
            let depth = depth_from_activation(&sigma, range)?;
            let pe_prev = warped_error(&t.target, &t.prev, &depth, &t.to_prev, k, &id_prev, w)?;
            let pe_next = warped_error(&t.target, &t.next, &depth, &t.to_next, k, &id_next, w)?;
            let pe_min = min_reprojection(&pe_prev, &pe_next)?;
            let mask = auto_mask_from_errors(&pe_min, &id_min)?;
            // Mean over the pixels the mask keeps; exactly zero when none are.
            let n_kept: f64 = mask.data().iter().map(|&v| v as f64).sum();
            let ph = pe_min
                .mul(&mask)?
                .sum()?
                .mul_scalar(1.0 / n_kept.max(1.0) as f32)?;
            ph_sum += ph.item() as f64;
            kept += n_kept;
            pixels += mask.numel();
            total = total.add(&ph)?;
            if w.smoothness > 0.0 {
                let img = if disp.dim(2) == h && disp.dim(3) == wd {
                    t.target.clone()
                } else {
                    t.target.resize_bilinear(disp.dim(2), disp.dim(3))?
                };
                let sm =
                    smoothness(disp, &img, w.normalize_smoothness)?.mul_scalar(w.smoothness)?;
                sm_sum += sm.item() as f64;
                total = total.add(&sm)?;
            }
            if l == 0 {
                masks.push(mask);
            }
        }
    }
    let breakdown = LossBreakdown {
        total: total.item(),
        photometric: ph_sum as f32,
        smoothness: sm_sum as f32,
        masked_fraction: (kept / pixels as f64) as f32,
    };
    Ok(LossOutput {
        total,
        breakdown,
        masks,
    })
}
