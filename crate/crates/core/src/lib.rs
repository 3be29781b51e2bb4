//! Agent-based simulation and analysis of floor-shifted multiplicative wealth
//! dynamics.
//!
//! * [`model`]: parameters, the multiplier law and one-day updates.
//! * [`engine`]: multi-run driver with deterministic counter-based draws.
//! * [`analytics`]: Gaussian envelope of the free process and its extreme
//!   quantile curves.
//! * [`stats`]: Gini, log histograms, the rank flux matrix.
//! * [`stationary`]: stationary density of the skewed process from a banded
//!   transfer operator.

// validation negates comparisons on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod engine;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod stationary;
pub mod stats;

pub use engine::{
    run, run_single, run_with, Parallelism, RecordingSchedule, Snapshot, TrajectoryRecord,
};
pub use model::{Ensemble, Mode, ModelError, ModelParams, MultiplierLaw};
