//! Self-supervised training loop.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use depthcast_tensor::{checkpoint, Adam, AdamConfig, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{PoseMode, RunConfig};
use crate::data::{augment, frame_index, ClipSample, HORIZONS};
use crate::error::{io_err, Error, Result};
use crate::eval::stack_frames;
use crate::geometry::{invert_pose_tensors, pose_tensors, DepthRange};
use crate::losses::{total_loss, LossBreakdown, LossOutput, PoseBatch, TargetInputs};
use crate::network::Model;

pub const TRAIN_CSV: &str = "train.csv";
pub const CONFIG_ARCHIVE: &str = "config.json";
const CSV_HEADER: &str = "step,total,photometric,smoothness,masked_fraction\n";

/// Slices rows `[i·b, (i+1)·b)` of a batched pose.
fn narrow_pose(p: &PoseBatch, i: usize, b: usize) -> Result<PoseBatch> {
    Ok(PoseBatch {
        rotation: p.rotation.narrow(0, i * b, b)?,
        translation: p.translation.narrow(0, i * b, b)?,
    })
}

/// Forward pass and loss for one batch of clips.
pub fn compute_loss(model: &Model, clips: &[&ClipSample], cfg: &RunConfig) -> Result<LossOutput> {
    let first = clips
        .first()
        .ok_or_else(|| Error::Invalid("empty training batch".into()))?;
    let k = first.intrinsics;
    if clips.iter().any(|c| c.intrinsics != k) {
        return Err(Error::Invalid(
            "all clips in a batch must share intrinsics".into(),
        ));
    }
    let b = clips.len();
    let context = (0..cfg.model.context)
        .map(|i| stack_frames(clips, i))
        .collect::<Result<Vec<_>>>()?;
    let out = model.depth.forward(&context)?;

    // Frames around every target, grouped target-major.
    let mut prev = Vec::new();
    let mut tgt = Vec::new();
    let mut next = Vec::new();
    for &h in &HORIZONS {
        let t = frame_index(h);
        prev.push(stack_frames(clips, t - 1)?);
        tgt.push(stack_frames(clips, t)?);
        next.push(stack_frames(clips, t + 1)?);
    }
    let n = HORIZONS.len();
    let (to_prev, to_next) = match cfg.train.pose_mode {
        PoseMode::Learned => {
            let po = model.pose.forward(
                &Tensor::cat(&prev, 0)?,
                &Tensor::cat(&tgt, 0)?,
                &Tensor::cat(&next, 0)?,
            )?;
            let (r, t) =
                invert_pose_tensors(&po.prev_to_target.rotation, &po.prev_to_target.translation)?;
            let inv = PoseBatch {
                rotation: r,
                translation: t,
            };
            let a = (0..n)
                .map(|i| narrow_pose(&inv, i, b))
                .collect::<Result<Vec<_>>>()?;
            let c = (0..n)
                .map(|i| narrow_pose(&po.target_to_next, i, b))
                .collect::<Result<Vec<_>>>()?;
            (a, c)
        }
        PoseMode::KnownPose => {
            let mut a = Vec::new();
            let mut c = Vec::new();
            for &h in &HORIZONS {
                let t = frame_index(h);
                let (r, tr) = pose_tensors(
                    &clips
                        .iter()
                        .map(|cl| cl.relative_pose(t, t - 1))
                        .collect::<Vec<_>>(),
                )?;
                a.push(PoseBatch {
                    rotation: r,
                    translation: tr,
                });
                let (r, tr) = pose_tensors(
                    &clips
                        .iter()
                        .map(|cl| cl.relative_pose(t, t + 1))
                        .collect::<Vec<_>>(),
                )?;
                c.push(PoseBatch {
                    rotation: r,
                    translation: tr,
                });
            }
            (a, c)
        }
    };
    let inputs: Vec<TargetInputs> = HORIZONS
        .iter()
        .enumerate()
        .map(|(i, &h)| TargetInputs {
            horizon: h,
            prev: prev[i].clone(),
            target: tgt[i].clone(),
            next: next[i].clone(),
            disparities: out.disparities[i].clone(),
            to_prev: to_prev[i].clone(),
            to_next: to_next[i].clone(),
        })
        .collect();
    total_loss(&inputs, &k, DepthRange::TRAIN, &cfg.loss)
}

fn max_abs_grad(opt: &Adam) -> f32 {
    opt.params()
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.into_iter())
        .fold(0.0f32, |m, v| {
            if v.is_nan() || m.is_nan() {
                f32::NAN
            } else {
                m.max(v.abs())
            }
        })
}

/// One optimization step. `step` is the 1-based index used in diagnostics.
pub fn train_step(
    model: &Model,
    optimizer: &mut Adam,
    clips: &[&ClipSample],
    cfg: &RunConfig,
    step: u64,
) -> Result<LossBreakdown> {
    // Ops refuse to produce non-finite values, so a NaN anywhere in the
    // forward or backward pass surfaces as a tensor error naming the op.
    let diagnose = |e: Error, optimizer: &Adam| match e {
        Error::Tensor(TensorError::NonFinite { op, .. }) => {
            let max_grad = max_abs_grad(optimizer);
            model.vs.zero_grad();
            Error::NonFiniteLoss {
                step,
                term: format!("{op} output"),
                max_grad,
            }
        }
        e => e,
    };
    let loss = compute_loss(model, clips, cfg).map_err(|e| diagnose(e, optimizer))?;
    let bd = loss.breakdown;
    let bad_term = if !bd.photometric.is_finite() {
        Some("photometric")
    } else if !bd.smoothness.is_finite() {
        Some("smoothness")
    } else if !bd.total.is_finite() {
        Some("total")
    } else {
        None
    };
    if let Some(term) = bad_term {
        let max_grad = match loss.total.backward() {
            Ok(()) => max_abs_grad(optimizer),
            Err(_) => f32::NAN,
        };
        model.vs.zero_grad();
        return Err(Error::NonFiniteLoss {
            step,
            term: term.into(),
            max_grad,
        });
    }
    loss.total
        .backward()
        .map_err(|e| diagnose(e.into(), optimizer))?;
    let max_grad = max_abs_grad(optimizer);
    if !max_grad.is_finite() {
        model.vs.zero_grad();
        return Err(Error::NonFiniteLoss {
            step,
            term: "gradient".into(),
            max_grad,
        });
    }
    optimizer.step()?;
    Ok(bd)
}

/// Clip indices for a (0-based) step: consecutive slices of a per-epoch
/// permutation, so any step can be recomputed without replaying the run.
pub fn batch_indices(seed: u64, step: u64, n: usize, batch: usize) -> Vec<usize> {
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch as u64)
        .map(|j| {
            let pos = step * batch as u64 + j;
            let epoch = pos / n as u64;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(epoch);
                perm.shuffle(&mut rng);
                cached = Some((epoch, perm));
            }
            cached.as_ref().unwrap().1[(pos % n as u64) as usize]
        })
        .collect()
}

fn augment_seed(seed: u64, step: u64, slot: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_5a5a_0f0f_f0f0);
    rng.set_stream(step);
    rng.set_word_pos(2 * slot as u128);
    rng.next_u64()
}

fn read_checkpoint(path: &Path) -> Result<Vec<checkpoint::Record>> {
    checkpoint::load(path)
        .map_err(|e| Error::Invalid(format!("checkpoint {}: {e}", path.display())))
}

/// Loads model parameters from a training checkpoint, ignoring optimizer
/// state.
pub fn load_weights(model: &Model, path: &Path) -> Result<()> {
    let records = read_checkpoint(path)?;
    model.vs.load_records(&records)?;
    Ok(())
}

/// Model, optimizer and step counter for one run.
pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    pub optimizer: Adam,
    /// Completed steps.
    pub step: u64,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Trainer> {
        config.validate()?;
        let model = Model::new(&config.model, config.seed)?;
        let t = &config.train;
        let optimizer = Adam::new(
            model.vs.params(),
            AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
        );
        Ok(Trainer {
            config,
            model,
            optimizer,
            step: 0,
        })
    }

    /// The batch for the next step, augmented if enabled.
    pub fn next_batch(&self, clips: &[ClipSample]) -> Vec<ClipSample> {
        let t = &self.config.train;
        batch_indices(self.config.seed, self.step, clips.len(), t.batch_size)
            .into_iter()
            .enumerate()
            .map(|(slot, i)| {
                if t.augment {
                    augment(
                        &clips[i],
                        augment_seed(self.config.seed, self.step, slot),
                        &self.config.augment,
                    )
                } else {
                    clips[i].clone()
                }
            })
            .collect()
    }

    /// Runs one step on `batch` and advances the counter.
    pub fn step_on(&mut self, batch: &[ClipSample]) -> Result<LossBreakdown> {
        let refs: Vec<&ClipSample> = batch.iter().collect();
        let bd = train_step(
            &self.model,
            &mut self.optimizer,
            &refs,
            &self.config,
            self.step + 1,
        )?;
        self.step += 1;
        Ok(bd)
    }

    pub fn checkpoint_records(&self) -> Vec<checkpoint::Record> {
        let mut r = self.model.vs.records();
        r.extend(self.optimizer.records());
        r
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        checkpoint::save(path, &self.checkpoint_records())?;
        Ok(())
    }

    /// Restores parameters, optimizer moments and the step counter.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let records = read_checkpoint(path)?;
        self.model.vs.load_records(&records)?;
        self.optimizer.load_records(&records)?;
        self.step = self.optimizer.state.t;
        Ok(())
    }

    pub fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.config
            .train
            .out_dir
            .join("checkpoints")
            .join(format!("step_{step:06}.dsq"))
    }

    /// Trains until `train.steps`, writing `train.csv`, the archived config
    /// and periodic checkpoints. Returns the final checkpoint path.
    pub fn run(
        &mut self,
        clips: &[ClipSample],
        mut on_step: impl FnMut(u64, &LossBreakdown),
    ) -> Result<PathBuf> {
        if clips.is_empty() {
            return Err(Error::Invalid("training set is empty".into()));
        }
        let out = self.config.train.out_dir.clone();
        fs::create_dir_all(&out).map_err(io_err(&out))?;
        let cfg_path = out.join(CONFIG_ARCHIVE);
        fs::write(&cfg_path, self.config.to_json()).map_err(io_err(&cfg_path))?;
        let csv_path = out.join(TRAIN_CSV);
        let fresh = self.step == 0 || !csv_path.exists();
        let mut csv = OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(&csv_path)
            .map_err(io_err(&csv_path))?;
        if fresh {
            csv.write_all(CSV_HEADER.as_bytes())
                .map_err(io_err(&csv_path))?;
        }
        let total = self.config.train.steps;
        let every = self.config.train.checkpoint_every;
        let mut last = None;
        while self.step < total {
            let batch = self.next_batch(clips);
            let bd = self.step_on(&batch)?;
            writeln!(
                csv,
                "{},{},{},{},{}",
                self.step, bd.total, bd.photometric, bd.smoothness, bd.masked_fraction
            )
            .map_err(io_err(&csv_path))?;
            on_step(self.step, &bd);
            if self.step.is_multiple_of(every) || self.step == total {
                let p = self.checkpoint_path(self.step);
                self.save_checkpoint(&p)?;
                last = Some(p);
            }
        }
        csv.flush().map_err(io_err(&csv_path))?;
        match last {
            Some(p) => Ok(p),
            None => {
                let p = self.checkpoint_path(self.step);
                self.save_checkpoint(&p)?;
                Ok(p)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_epoch() {
        let n = 10;
        let mut seen: Vec<usize> = (0..5).flat_map(|s| batch_indices(3, s, n, 2)).collect();
        seen.sort();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
        assert_eq!(batch_indices(3, 7, n, 4), batch_indices(3, 7, n, 4));
        assert_ne!(batch_indices(3, 0, n, 4), batch_indices(4, 0, n, 4));
    }

    #[test]
    fn augment_seeds_differ() {
        assert_ne!(augment_seed(0, 0, 0), augment_seed(0, 0, 1));
        assert_ne!(augment_seed(0, 0, 0), augment_seed(0, 1, 0));
    }
}
