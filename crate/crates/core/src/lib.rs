//! Group counts for group normalization chosen from layer widths so that a
//! weight → group norm → activation block keeps the gradient variance
//! unchanged, together with the machinery to check that claim numerically.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod error;
pub mod idx;
pub mod inputs;
pub mod numerics;
pub mod planner;
pub mod probes;
pub mod trainer;
pub mod unitblock;

pub use activation::ActivationKind;
pub use error::{Error, Result};
pub use numerics::{Matrix, RngStream};
pub use trainer::{Dataset, MlpModel};
