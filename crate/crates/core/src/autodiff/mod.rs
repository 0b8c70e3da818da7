//! Dense reverse-mode differentiation over `f64` tensors.
//!
//! Build tensors with [`Tape::leaf`] (or bind a whole [`ParameterStore`]),
//! compose them with the primitive methods on [`Tensor`], then call
//! [`Tape::backward`] on a scalar result. Operations whose operands are all
//! untracked never touch the tape, so an inference tape stays empty.

mod backprop;
mod check;
mod ops;
mod params;
mod tape;

pub use check::{grad_check, grad_check_params, GradCheckReport};
pub use params::{Bound, Param, ParameterStore};
pub use tape::{Gradients, Tape, Tensor};
