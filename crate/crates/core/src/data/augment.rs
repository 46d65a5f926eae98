//! Clip-level augmentation: horizontal flip and color jitter.
//!
//! Both are applied with one draw per clip so every frame sees the same
//! transform.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{DepthMap, Pose};

use super::clip::ClipSample;
use super::scene::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Multiplicative brightness factor drawn from `1 ± brightness`.
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            flip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
        }
    }
}

fn flip_image(img: &Image) -> Image {
    let (w, h) = (img.width, img.height);
    let mut data = vec![0.0f32; img.data.len()];
    for row in 0..3 * h {
        for x in 0..w {
            data[row * w + x] = img.data[row * w + (w - 1 - x)];
        }
    }
    Image {
        width: w,
        height: h,
        data,
    }
}

fn flip_depth(d: &DepthMap) -> DepthMap {
    let (w, h) = (d.width, d.height);
    let mut values = vec![0.0f32; d.values.len()];
    for y in 0..h {
        for x in 0..w {
            values[y * w + x] = d.values[y * w + (w - 1 - x)];
        }
    }
    DepthMap {
        width: w,
        height: h,
        values,
    }
}

/// Conjugates a pose by the mirror `x ↦ −x`.
pub fn mirror_pose(p: &Pose) -> Pose {
    let m = Matrix3::from_diagonal(&nalgebra::Vector3::new(-1.0, 1.0, 1.0));
    Pose::new(m * p.rotation * m, m * p.translation)
}

/// Mirrors images, depths, intrinsics and poses about the vertical axis.
/// With pixel centers at integer coordinates the principal point maps to
/// `W − 1 − cx`.
pub fn flip_clip(clip: &ClipSample) -> ClipSample {
    let mut k = clip.intrinsics;
    k.cx = (clip.width() as f64 - 1.0) - k.cx;
    ClipSample {
        frames: clip.frames.iter().map(flip_image).collect(),
        depths: clip.depths.iter().map(flip_depth).collect(),
        poses: clip.poses.iter().map(mirror_pose).collect(),
        intrinsics: k,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
}

impl Jitter {
    /// Applies brightness, then contrast about `pivot`, then saturation.
    pub fn apply(&self, img: &Image, pivot: f32) -> Image {
        let n = img.width * img.height;
        let mut data = img.data.clone();
        for i in 0..n {
            let mut px = [data[i], data[n + i], data[2 * n + i]];
            for v in px.iter_mut() {
                *v = ((*v * self.brightness - pivot) * self.contrast + pivot).clamp(0.0, 1.0);
            }
            let gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
            for (c, v) in px.iter().enumerate() {
                data[c * n + i] = (gray + (v - gray) * self.saturation).clamp(0.0, 1.0);
            }
        }
        Image {
            width: img.width,
            height: img.height,
            data,
        }
    }
}

fn mean_gray(img: &Image) -> f32 {
    let n = img.width * img.height;
    let s: f64 = (0..n)
        .map(|i| {
            (0.299 * img.data[i] + 0.587 * img.data[n + i] + 0.114 * img.data[2 * n + i]) as f64
        })
        .sum();
    (s / n as f64) as f32
}

/// Random flip and color jitter, deterministic in `seed`. Depth maps are
/// never touched by jitter.
pub fn augment(clip: &ClipSample, seed: u64, cfg: &AugmentConfig) -> ClipSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = rng.gen_bool(cfg.flip_prob.clamp(0.0, 1.0));
    let mut draw = |r: f32| {
        if r > 0.0 {
            rng.gen_range(1.0 - r..=1.0 + r)
        } else {
            1.0
        }
    };
    let jitter = Jitter {
        brightness: draw(cfg.brightness),
        contrast: draw(cfg.contrast),
        saturation: draw(cfg.saturation),
    };
    let mut out = if flip { flip_clip(clip) } else { clip.clone() };
    if jitter
        != (Jitter {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
        })
    {
        let pivot = mean_gray(&out.frames[super::clip::T_INDEX]);
        out.frames = out.frames.iter().map(|f| jitter.apply(f, pivot)).collect();
    }
    out
}
