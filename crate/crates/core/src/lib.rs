//! Ordinary kriging with kernel regularization by condition-number minimization.
//!
//! The crate is split along the pipeline:
//!
//! * [`correlation`] - Gaussian correlation kernel, correlation matrices and their conditioning.
//! * [`kriging`] - training sets and the ordinary kriging predictor.
//! * [`regularizer`] - tunes the kernel length scales to minimize the condition number.
//! * [`testlab`] - analytic 2D test functions, sampling, grid fields and error metrics.

pub mod correlation;
pub mod error;
pub mod kriging;
pub mod regularizer;
pub mod testlab;

pub use correlation::{CorrelationSystem, KernelParams, CONDITION_NORM, KAPPA_SENTINEL};
pub use error::{Error, Result};
pub use kriging::{Domain, KrigingModel, Prediction, TrainingSet};
pub use regularizer::{regularize, ConvergenceTrace, RegularizerConfig};
pub use testlab::{ErrorReport, GridField, TestFunction};
