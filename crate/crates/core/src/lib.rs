//! Multiply robust estimation for tabular data whose distribution shifts
//! locally, segment by segment, between training and deployment.
//!
//! The pipeline clusters segments by the kernel MMD between their joint
//! `(y, x)` samples, trains one gradient-boosted base model per cluster plus
//! one on all segments, and then, per segment, stacks the base-model margins
//! with a norm-constrained ridge fit (stage 1) and refines the stack with an
//! importance-weighted boosted correction that starts from the stacked margin
//! (stage 2).
//!
//! Modules:
//! - [`data`]: datasets, CSV ingestion, splits, the synthetic generator and
//!   constructed shifts.
//! - [`segmentation`]: kernels, unbiased MMD, segment distances and Ward clustering.
//! - [`weights`]: discriminative, kernel-mean-matching and black-box label-shift weights.
//! - [`learners`]: linear models and a histogram GBT learner with base margins.
//! - [`mr`]: the two-stage estimator, the full pipeline and the global baselines.
//! - [`evalcv`]: metrics, per-segment reports and cross-validation.

pub mod data;
pub mod error;
pub mod evalcv;
pub mod learners;
pub mod mr;
pub mod rng;
pub mod segmentation;
pub mod weights;

pub use error::{Error, Result};

/// Version tag written into every JSON document this crate produces.
pub const FORMAT_VERSION: u32 = 1;
