//! Sparse identification of ODEs from noisy trajectories.
//!
//! The pipeline smooths measurements (Kalman, total variation, Savitzky-Golay
//! or finite differences), evaluates a cubic polynomial library on the
//! smoothed states and fits a fixed-sparsity model with bagged ensembling.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod banded;
pub mod error;
pub mod harness;
pub mod hyperopt;
pub mod integrator;
pub mod io;
pub mod metrics;
pub mod sindy;
pub mod smoothing;
pub mod systems;

pub use error::{Error, Result};
