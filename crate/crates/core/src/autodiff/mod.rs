//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Tape`] as they execute. [`Tape::backward`]
//! replays the record in reverse and accumulates gradients into every
//! trainable leaf. [`grad_check`] validates the analytic gradients of any
//! scalar program against central finite differences.
//!
//! ```
//! use lantern::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

mod gradcheck;
mod kernels;
mod stochastic;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckEntry, GradCheckReport};
pub use stochastic::StochasticOp;
pub use tape::{ElementwiseOp, Tape, Var, BCE_CLAMP};
pub use tensor::Tensor;

pub(crate) use tape::validate_mask;
