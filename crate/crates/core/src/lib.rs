//! Infidelity and sensitivity of feature attributions.
//!
//! Models expose a value and a gradient through [`models::Predictor`];
//! [`explainers`] turn them into attributions, [`measures`] score those
//! attributions, and [`verify`] runs executable checks of the inequalities
//! that relate the scores.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod corpus;
pub mod error;
pub mod explainers;
pub mod measures;
pub mod models;
pub mod numerics;
pub mod perturbations;
pub mod verify;

pub use error::{Error, Result};
pub use explainers::{Attribution, Explainer, Locality, SmoothingKernel};
pub use measures::{BallNorm, MeasureConfig, MeasureReport};
pub use models::{Model, Predictor};
pub use numerics::RngStream;
pub use perturbations::{Baseline, PerturbationFamily};
