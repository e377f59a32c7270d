//! Multi-view facial action unit detection on synthetic data: a small
//! layer-graph network kernel, per-unit binary detectors over colour and
//! optical-flow inputs, fusion architectures, temporal median smoothing,
//! and a viewpoint-routed detector-ensemble cascade.
//!
//! Numeric code is generic over the scalar type; training runs in
//! [`TrainScalar`] (f32) while gradient checks use [`CheckScalar`] (f64).

pub mod datakit;
pub mod detectors;
pub mod error;
pub mod evalkit;
pub mod motion;
pub mod multiview;
pub mod net;
pub mod scalar;
pub mod temporal;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{crop_resize, rgb_to_gray, FaceBox, Tensor};

/// Scalar type used for training and checkpoints.
pub type TrainScalar = f32;
/// Scalar type used for gradient verification.
pub type CheckScalar = f64;
