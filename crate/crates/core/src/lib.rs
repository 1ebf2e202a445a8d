//! Unsupervised, class-aware 3D pseudo-labeling for sequential LiDAR point clouds.
//!
//! The pipeline discovers objects with ground removal, persistence scoring and
//! spatio-temporal density clustering, links them into tracks, classifies them
//! from rendered depth maps through a pluggable vision-language backend, and
//! refines labels and boxes along each track. [`eval`] provides rotated-box
//! IoU and AP metrics, and [`synth`] generates 2.5D scenes with ground truth.

pub mod classify;
pub mod cluster;
pub mod config;
pub mod ephemeral;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod ground;
pub mod pipeline;
pub mod project;
pub mod proposal;
pub mod refine;
pub mod seqio;
pub mod spatial;
pub mod synth;
pub mod track;
pub mod types;

pub use error::{Error, Result};
pub use geometry::{OrientedBox, Point3};
pub use types::{MotionStatus, ObjectClass};
