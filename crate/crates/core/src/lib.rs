// Validation uses `!(x > 0.0)` style checks on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod eval;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
