use serde::{Deserialize, Serialize};

use crate::data::HORIZONS;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub depths: [usize; 4],
    pub channels: [usize; 4],
    pub heads: [usize; 4],
    pub st_embed: usize,
    pub st_heads: usize,
    pub st_depth: usize,
    pub state_embed: usize,
    pub state_heads: usize,
    pub state_depth: usize,
    pub window: usize,
    pub mlp_ratio: usize,
    pub share_state_predictor: bool,
    pub context: usize,
    /// Forecast horizons decoded from the state chain.
    pub targets: Vec<usize>,
    /// Decoder widths from coarsest upsampling to full resolution.
    pub decoder_channels: [usize; 5],
    pub pose_channels: [usize; 6],
    pub pose_scale: f32,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::desk()
    }
}

impl NetworkConfig {
    /// Small preset sized for a single CPU core.
    pub fn desk() -> NetworkConfig {
        NetworkConfig {
            height: 64,
            width: 96,
            patch_size: 4,
            depths: [2, 2, 2, 2],
            channels: [32, 64, 128, 256],
            heads: [2, 2, 4, 4],
            st_embed: 32,
            st_heads: 2,
            st_depth: 2,
            state_embed: 32,
            state_heads: 2,
            state_depth: 2,
            window: 2,
            mlp_ratio: 4,
            share_state_predictor: true,
            context: 4,
            targets: HORIZONS.to_vec(),
            decoder_channels: [128, 64, 32, 16, 8],
            pose_channels: [16, 32, 64, 128, 128, 128],
            pose_scale: 0.01,
        }
    }

    /// Swin-T sized backbone at KITTI-like resolution. Kept for reference;
    /// far too slow for CPU training.
    pub fn paper() -> NetworkConfig {
        NetworkConfig {
            height: 192,
            width: 640,
            patch_size: 4,
            depths: [2, 2, 6, 2],
            channels: [96, 192, 384, 768],
            heads: [3, 6, 12, 24],
            st_embed: 96,
            st_heads: 3,
            st_depth: 2,
            state_embed: 96,
            state_heads: 3,
            state_depth: 2,
            window: 7,
            mlp_ratio: 4,
            share_state_predictor: true,
            context: 4,
            targets: HORIZONS.to_vec(),
            decoder_channels: [256, 128, 64, 32, 16],
            pose_channels: [16, 32, 64, 128, 256, 256],
            pose_scale: 0.01,
        }
    }

    pub fn preset(name: &str) -> Result<NetworkConfig> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::Config(format!(
                "unknown network preset `{name}` (expected desk or paper)"
            ))),
        }
    }

    /// Number of state-predictor applications (largest horizon).
    pub fn steps(&self) -> usize {
        self.targets.iter().copied().max().unwrap_or(0)
    }

    /// Feature-map extents at strides 4, 8, 16, 32.
    pub fn pyramid_sizes(&self) -> [(usize, usize); 4] {
        let mut out = [(0, 0); 4];
        let (mut h, mut w) = (self.height / self.patch_size, self.width / self.patch_size);
        for (i, o) in out.iter_mut().enumerate() {
            if i > 0 {
                h = h.div_ceil(2);
                w = w.div_ceil(2);
            }
            *o = (h, w);
        }
        out
    }

    /// Disparity extents, finest first.
    pub fn disparity_sizes(&self) -> [(usize, usize); 4] {
        [
            (self.height, self.width),
            (self.height / 2, self.width / 2),
            (self.height / 4, self.width / 4),
            (self.height / 8, self.width / 8),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size != 4 {
            return bad(format!(
                "patch_size must be 4 (decoder strides assume it), got {}",
                self.patch_size
            ));
        }
        if !self.height.is_multiple_of(32)
            || !self.width.is_multiple_of(32)
            || self.height == 0
            || self.width == 0
        {
            return bad(format!(
                "image extents must be positive multiples of 32, got {}x{}",
                self.height, self.width
            ));
        }
        for i in 0..4 {
            if self.channels[i] == 0
                || self.heads[i] == 0
                || !self.channels[i].is_multiple_of(self.heads[i])
            {
                return bad(format!(
                    "stage {i}: channels {} not divisible by heads {}",
                    self.channels[i], self.heads[i]
                ));
            }
        }
        if !self.st_embed.is_multiple_of(self.st_heads)
            || !self.state_embed.is_multiple_of(self.state_heads)
        {
            return bad("embed dims must be divisible by their head counts".into());
        }
        if self.window == 0 || self.mlp_ratio == 0 {
            return bad("window and mlp_ratio must be positive".into());
        }
        if self.context != 4 {
            return bad(format!("context length must be 4, got {}", self.context));
        }
        if self.targets != HORIZONS {
            return bad(format!(
                "targets must be {HORIZONS:?}, got {:?}",
                self.targets
            ));
        }
        if !(self.pose_scale > 0.0) {
            return bad("pose_scale must be positive".into());
        }
        Ok(())
    }
}
