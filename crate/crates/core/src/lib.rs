//! Desk-scale mechanics of NMS-free end-to-end object detection.
//!
//! * [`geometry`]: box, rotated-box and keypoint similarity primitives.
//! * [`postprocess`]: greedy NMS, the NMS-free confidence tail, and the
//!   softmax-bin vs direct coordinate decoders.
//! * [`assign`]: fixed-IoU, small-target-aware and one-to-one label assignment.
//! * [`sched_loss`]: BCE and the cosine-decayed cls/box loss weighting.
//! * [`optim`]: SGD momentum, Newton-Schulz orthogonalization and MuSGD.
//! * [`toytrain`]: synthetic scenes and a linear decoupled head that ties the
//!   pieces together.
//! * [`bench`]: latency harness for the inference tails.
//! * [`convergence`]: seeded SGD vs MuSGD comparisons.
//!
//! The numeric modules are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases.

pub mod assign;
pub mod bench;
pub mod convergence;
pub mod error;
pub mod geometry;
pub mod matrix;
pub mod optim;
pub mod postprocess;
pub mod rng;
pub mod scalar;
pub mod sched_loss;
pub mod toytrain;

pub use error::{Error, Result};
pub use scalar::Real;

pub type BBox64 = geometry::BBox<f64>;
pub type BBox32 = geometry::BBox<f32>;
pub type RotatedBox64 = geometry::RotatedBox<f64>;
pub type RotatedBox32 = geometry::RotatedBox<f32>;
pub type Detection64 = postprocess::Detection<f64>;
pub type Detection32 = postprocess::Detection<f32>;
pub type GroundTruth64 = assign::GroundTruth<f64>;
pub type AnchorCandidate64 = assign::AnchorCandidate<f64>;
pub type AssignmentResult64 = assign::AssignmentResult<f64>;
pub type ParamMatrix64 = matrix::ParamMatrix<f64>;
pub type ParamMatrix32 = matrix::ParamMatrix<f32>;
pub type OptimState64 = optim::OptimState<f64>;
pub type ProgLossSchedule64 = sched_loss::ProgLossSchedule<f64>;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
