//! Uncertainty-aware cross-entropy training laboratory.
//!
//! The crate packages everything needed to study uncertainty-weighted
//! segmentation training at desk scale:
//!
//! - [`tensor`]: dense f32 arrays with reverse-mode automatic differentiation,
//! - [`network`]: a small configurable conv/relu/dropout segmentation net,
//! - [`uce`]: MC-Dropout sampling, per-pixel uncertainty weights
//!   `w = (1 + sigma)^alpha`, and the weighted cross-entropy loss,
//! - [`metrics`]: mIoU, expected calibration error, mean class-wise
//!   predictive uncertainty, binary accuracy maps,
//! - [`data`]: a deterministic synthetic dataset generator, the
//!   scale/crop/flip augmentation pipeline, and PPM/PGM dataset files,
//! - [`harness`]: SGD with momentum and polynomial LR decay, training and
//!   evaluation loops, and ablation sweeps with CSV logging.

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod tensor;
pub mod uce;

pub use error::{Error, Result};
pub use rng::{RngStream, StreamKind};
pub use tensor::{CompRecord, Tensor};
