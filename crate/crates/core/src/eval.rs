//! Depth metrics, per-clip median scaling and held-out evaluation.

use std::fmt::Write as _;
use std::path::Path;

use depthcast_tensor::{no_grad, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{ClipSample, Dataset, Image, HORIZONS};
use crate::error::{io_err, Error, Result};
use crate::geometry::{depth_from_activation, DepthMap, DepthRange};
use crate::network::DepthNet;

/// Pixels whose ground truth lies strictly inside the evaluation range.
/// Sky pixels sit exactly at the far plane and are excluded.
pub fn valid_mask(gt: &DepthMap, range: DepthRange) -> Vec<bool> {
    gt.values
        .iter()
        .map(|&g| g > range.min && g < range.max)
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Ratio `median(gt) / median(pred)` over the valid pixels.
pub fn median_ratio(pred: &DepthMap, gt: &DepthMap, valid: &[bool]) -> Result<f64> {
    check_extents(pred, gt, valid)?;
    let pick = |m: &DepthMap| -> Vec<f64> {
        m.values
            .iter()
            .zip(valid)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v as f64)
            .collect()
    };
    let p = pick(pred);
    if p.is_empty() {
        return Err(Error::Metric(
            "median scaling needs at least one valid pixel".into(),
        ));
    }
    let mp = median(p);
    if !(mp > 0.0) || !mp.is_finite() {
        return Err(Error::Metric(format!(
            "predicted median depth is {mp}; cannot rescale"
        )));
    }
    Ok(median(pick(gt)) / mp)
}

/// Rescales `pred` by the median ratio without clamping.
pub fn median_scale_unclamped(pred: &DepthMap, gt: &DepthMap, valid: &[bool]) -> Result<DepthMap> {
    let r = median_ratio(pred, gt, valid)?;
    let values = pred.values.iter().map(|&v| (v as f64 * r) as f32).collect();
    DepthMap::new(pred.width, pred.height, values)
}

/// Median scaling followed by clamping to `range`.
pub fn median_scale(
    pred: &DepthMap,
    gt: &DepthMap,
    valid: &[bool],
    range: DepthRange,
) -> Result<DepthMap> {
    let mut out = median_scale_unclamped(pred, gt, valid)?;
    out.values
        .iter_mut()
        .for_each(|v| *v = v.clamp(range.min, range.max));
    Ok(out)
}

fn check_extents(pred: &DepthMap, gt: &DepthMap, valid: &[bool]) -> Result<()> {
    if pred.width != gt.width || pred.height != gt.height || valid.len() != gt.values.len() {
        return Err(Error::Metric(format!(
            "prediction {}x{} vs ground truth {}x{} (mask of {})",
            pred.width,
            pred.height,
            gt.width,
            gt.height,
            valid.len()
        )));
    }
    Ok(())
}

/// Error metrics over a set of pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub pixels: u64,
}

/// Pixel-pooled running sums; merging accumulators and then finishing
/// equals computing over the union of their pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricSums {
    abs_rel: f64,
    sq_rel: f64,
    sq: f64,
    sq_log: f64,
    d: [u64; 3],
    n: u64,
}

impl MetricSums {
    pub fn add(&mut self, pred: &DepthMap, gt: &DepthMap, valid: &[bool]) -> Result<()> {
        check_extents(pred, gt, valid)?;
        for ((&p, &g), _) in pred
            .values
            .iter()
            .zip(&gt.values)
            .zip(valid)
            .filter(|(_, &ok)| ok)
        {
            let (p, g) = (p as f64, g as f64);
            if !(g > 0.0) {
                return Err(Error::Metric(format!(
                    "non-positive ground-truth depth {g} inside the valid mask"
                )));
            }
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::Metric(format!("non-positive predicted depth {p}")));
            }
            let diff = p - g;
            self.abs_rel += diff.abs() / g;
            self.sq_rel += diff * diff / g;
            self.sq += diff * diff;
            let dl = p.ln() - g.ln();
            self.sq_log += dl * dl;
            let ratio = (p / g).max(g / p);
            for (k, t) in [1.25f64, 1.25 * 1.25, 1.25 * 1.25 * 1.25]
                .iter()
                .enumerate()
            {
                if ratio < *t {
                    self.d[k] += 1;
                }
            }
            self.n += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricSums) {
        self.abs_rel += other.abs_rel;
        self.sq_rel += other.sq_rel;
        self.sq += other.sq;
        self.sq_log += other.sq_log;
        for k in 0..3 {
            self.d[k] += other.d[k];
        }
        self.n += other.n;
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.n == 0 {
            return Err(Error::Metric("no valid pixels to evaluate".into()));
        }
        let n = self.n as f64;
        Ok(Metrics {
            abs_rel: self.abs_rel / n,
            sq_rel: self.sq_rel / n,
            rmse: (self.sq / n).sqrt(),
            rmse_log: (self.sq_log / n).sqrt(),
            d1: self.d[0] as f64 / n,
            d2: self.d[1] as f64 / n,
            d3: self.d[2] as f64 / n,
            pixels: self.n,
        })
    }
}

/// Metrics of an already scaled prediction.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, valid: &[bool]) -> Result<Metrics> {
    let mut s = MetricSums::default();
    s.add(pred, gt, valid)?;
    s.finish()
}

/// One row per forecast horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<(usize, Metrics)>,
}

impl EvalReport {
    pub fn get(&self, horizon: usize) -> Option<&Metrics> {
        self.rows
            .iter()
            .find(|(h, _)| *h == horizon)
            .map(|(_, m)| m)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("horizon,abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3\n");
        for (h, m) in &self.rows {
            writeln!(
                s,
                "{h},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.d1, m.d2, m.d3
            )
            .unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(io_err(path))
    }

    /// Human-readable table.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}\n",
            "horizon", "abs_rel", "sq_rel", "rmse", "rmse_log", "d1", "d2", "d3"
        );
        for (h, m) in &self.rows {
            writeln!(
                s,
                "{:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>7.4} {:>7.4} {:>7.4}",
                format!("t+{h}"),
                m.abs_rel,
                m.sq_rel,
                m.rmse,
                m.rmse_log,
                m.d1,
                m.d2,
                m.d3
            )
            .unwrap();
        }
        s
    }
}

/// Stacks frame `index` of every clip into `[B,3,H,W]`.
pub fn stack_frames(clips: &[&ClipSample], index: usize) -> Result<Tensor> {
    let frames: Vec<Tensor> = clips.iter().map(|c| c.frames[index].to_tensor()).collect();
    Ok(Tensor::cat(&frames, 0)?)
}

/// Predicted depth for every clip and horizon in `HORIZONS` order,
/// from the finest disparity and the training depth range.
pub fn predict_depths(net: &DepthNet, clips: &[&ClipSample]) -> Result<Vec<Vec<DepthMap>>> {
    let context = (0..net.config.context)
        .map(|k| stack_frames(clips, k))
        .collect::<Result<Vec<_>>>()?;
    predict_context(net, &context)
}

/// Depth forecasts for one sequence of context frames, oldest first.
pub fn predict_frames(net: &DepthNet, frames: &[Image]) -> Result<Vec<DepthMap>> {
    let context: Vec<Tensor> = frames.iter().map(Image::to_tensor).collect();
    Ok(predict_context(net, &context)?.remove(0))
}

fn predict_context(net: &DepthNet, context: &[Tensor]) -> Result<Vec<Vec<DepthMap>>> {
    no_grad(|| {
        let out = net.forward(context)?;
        let mut per_clip = vec![Vec::with_capacity(HORIZONS.len()); context[0].dim(0)];
        for &h in &HORIZONS {
            let disp = &out
                .for_target(h)
                .ok_or_else(|| Error::Invalid(format!("network does not forecast horizon {h}")))?
                [0];
            let depth = depth_from_activation(disp, DepthRange::TRAIN)?;
            let (hh, ww) = (depth.dim(2), depth.dim(3));
            for (b, slot) in per_clip.iter_mut().enumerate() {
                let v = depth.data()[b * hh * ww..(b + 1) * hh * ww].to_vec();
                slot.push(DepthMap::new(ww, hh, v)?);
            }
        }
        Ok(per_clip)
    })
}

/// Evaluates predictions from `predict` (one depth per horizon for each
/// clip of a batch) over `clips`, pooling pixels per horizon.
pub fn evaluate_with<F>(clips: &[ClipSample], batch: usize, mut predict: F) -> Result<EvalReport>
where
    F: FnMut(&[&ClipSample]) -> Result<Vec<Vec<DepthMap>>>,
{
    if clips.is_empty() {
        return Err(Error::Metric("evaluation set is empty".into()));
    }
    let mut sums = [MetricSums::default(); HORIZONS.len()];
    let refs: Vec<&ClipSample> = clips.iter().collect();
    for chunk in refs.chunks(batch.max(1)) {
        let preds = predict(chunk)?;
        if preds.len() != chunk.len() {
            return Err(Error::Metric(format!(
                "{} predictions for {} clips",
                preds.len(),
                chunk.len()
            )));
        }
        for (clip, pred) in chunk.iter().zip(&preds) {
            for (i, &h) in HORIZONS.iter().enumerate() {
                let gt = clip.depth_at(h).ok_or_else(|| {
                    Error::Metric(format!("ground truth for horizon {h} is missing"))
                })?;
                let p = pred
                    .get(i)
                    .ok_or_else(|| Error::Metric(format!("no prediction for horizon {h}")))?;
                let valid = valid_mask(gt, DepthRange::EVAL);
                let scaled = median_scale(p, gt, &valid, DepthRange::EVAL)?;
                sums[i].add(&scaled, gt, &valid)?;
            }
        }
    }
    let rows = HORIZONS
        .iter()
        .zip(&sums)
        .map(|(&h, s)| Ok((h, s.finish()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { rows })
}

/// Evaluates the depth network on every clip of `dataset`.
pub fn evaluate(net: &DepthNet, dataset: &Dataset, batch: usize) -> Result<EvalReport> {
    let clips = dataset.load_all()?;
    evaluate_with(&clips, batch, |c| predict_depths(net, c))
}
