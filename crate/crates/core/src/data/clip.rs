//! Ten-frame training clips with exact ground truth.

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Pose};

use super::scene::{render_frame, Image, SceneOptions, SceneSpec};

/// Frames per clip: `t−3 ..= t+6`.
pub const CLIP_LEN: usize = 10;
/// Number of context frames fed to the depth network.
pub const CONTEXT: usize = 4;
/// Clip index of frame `t` (the most recent context frame).
pub const T_INDEX: usize = 3;
/// Forecast horizons, in frames after `t`.
pub const HORIZONS: [usize; 4] = [0, 1, 3, 5];

/// Clip index of the frame at `horizon` frames after `t`.
pub fn frame_index(horizon: usize) -> usize {
    T_INDEX + horizon
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    /// Frames `t−3 ..= t+6`.
    pub frames: Vec<Image>,
    /// Ground-truth depth for each entry of [`HORIZONS`], in order.
    pub depths: Vec<DepthMap>,
    /// Camera-to-world pose of every frame.
    pub poses: Vec<Pose>,
    pub intrinsics: CameraIntrinsics,
}

impl ClipSample {
    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    /// Pose taking coordinates of frame index `a` into frame index `b`.
    pub fn relative_pose(&self, a: usize, b: usize) -> Pose {
        Pose::relative(&self.poses[a], &self.poses[b])
    }

    pub fn depth_at(&self, horizon: usize) -> Option<&DepthMap> {
        HORIZONS
            .iter()
            .position(|&h| h == horizon)
            .map(|i| &self.depths[i])
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != CLIP_LEN
            || self.poses.len() != CLIP_LEN
            || self.depths.len() != HORIZONS.len()
        {
            return Err(Error::Invalid(format!(
                "clip needs {CLIP_LEN} frames, {CLIP_LEN} poses and {} depth maps, got {}, {}, {}",
                HORIZONS.len(),
                self.frames.len(),
                self.poses.len(),
                self.depths.len()
            )));
        }
        let (w, h) = (self.width(), self.height());
        self.intrinsics.validate(w, h)?;
        if self.frames.iter().any(|f| f.width != w || f.height != h)
            || self.depths.iter().any(|d| d.width != w || d.height != h)
        {
            return Err(Error::Invalid(
                "clip frames and depths differ in size".into(),
            ));
        }
        if let Some(i) = self.poses.iter().position(|p| !p.is_valid(1e-5)) {
            return Err(Error::Invalid(format!("pose {i} is not a rigid transform")));
        }
        Ok(())
    }
}

/// Renders a clip from an explicit scene.
pub fn render_clip(scene: &SceneSpec) -> Result<ClipSample> {
    scene.validate()?;
    if scene.frame_count != CLIP_LEN {
        return Err(Error::Invalid(format!(
            "clips have {CLIP_LEN} frames, scene has {}",
            scene.frame_count
        )));
    }
    let mut frames = Vec::with_capacity(CLIP_LEN);
    let mut depths = Vec::with_capacity(HORIZONS.len());
    let mut poses = Vec::with_capacity(CLIP_LEN);
    for k in 0..CLIP_LEN {
        let time = scene.time_of(k);
        let pose = scene.camera.pose_at(time);
        let (img, depth) = render_frame(scene, time, &scene.intrinsics, &pose);
        frames.push(img);
        if HORIZONS.iter().any(|&h| frame_index(h) == k) {
            depths.push(depth);
        }
        poses.push(pose);
    }
    Ok(ClipSample {
        frames,
        depths,
        poses,
        intrinsics: scene.intrinsics,
    })
}

/// Random clip, deterministic in `seed`.
pub fn generate_clip(seed: u64, opts: &SceneOptions) -> Result<ClipSample> {
    let opts = SceneOptions {
        frame_count: CLIP_LEN,
        ..*opts
    };
    render_clip(&SceneSpec::random(seed, &opts))
}
