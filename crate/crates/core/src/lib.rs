//! Self-supervised depth-sequence forecasting.
//!
//! A spatio-temporal attention network reads four context frames and emits
//! depth for the current frame and three future horizons. Training uses
//! only photometric warping losses; a procedural renderer supplies clips
//! with exact ground-truth depth and poses for evaluation.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod network;
pub mod train;

pub use error::{Error, Result};
