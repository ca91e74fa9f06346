//! Instance-level augmentation for SAR ship detection datasets.
//!
//! The crate simulates radar-shadow information loss inside ship bounding
//! boxes while leaving the surrounding context untouched: a rectangle flush
//! with one box edge is filled with a background noise patch whose histogram
//! has been matched to the non-target pixels of the same box. Random erasure
//! and direct background insertion are available as baselines.
//!
//! [`dcn`] holds reference (double precision) deformable convolution and
//! deformable RoI pooling kernels with analytic gradients and a finite
//! difference checker.

pub mod augment;
pub mod context;
pub mod dataset;
pub mod dcn;
pub mod error;
pub mod mask;
pub mod raster;
pub mod rect;
pub mod synth;

pub use error::{Error, Result};
