//! Synthetic clips, on-disk formats and augmentation.

pub mod augment;
pub mod clip;
pub mod dataset;
pub mod formats;
pub mod scene;

pub use augment::{augment, flip_clip, AugmentConfig};
pub use clip::{
    frame_index, generate_clip, render_clip, ClipSample, CLIP_LEN, CONTEXT, HORIZONS, T_INDEX,
};
pub use dataset::{generate_dataset, Dataset, Manifest};
pub use scene::{render_frame, Image, SceneOptions, SceneSpec};
