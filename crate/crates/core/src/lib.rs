//! Losses, metrics and joint training for part-segmented point-cloud
//! reconstruction.
//!
//! - [`cloud`]: point-cloud types and exact nearest-neighbor correspondences
//! - [`losses`]: Chamfer, cross-entropy and the location-aware segmentation
//!   loss, each with analytic gradients
//! - [`metrics`]: unit-box renormalization, EMD, bidirectional mIoU
//! - [`nn`]: dense decoders and a point-wise segmentation network
//! - [`data`]: procedural part-labeled shapes and file I/O
//! - [`experiment`]: joint and baseline training, evaluation, alpha sweeps

pub mod assignment;
pub mod checkpoint;
pub mod cloud;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod nn;

pub use cloud::{ClassScores, Correspondence, Direction, LabeledPointCloud, PointCloud};
pub use error::{Error, Result};
pub use losses::{LossWeights, ValueGrad};
