//! Depth-sequence network and pose network.

pub mod config;
pub mod layers;
pub mod model;
pub mod swin;

pub use config::NetworkConfig;
pub use model::{DepthNet, DepthSequenceOutput, Model, PoseNet, PoseOutput};
