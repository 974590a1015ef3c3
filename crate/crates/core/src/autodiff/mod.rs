//! Define-by-run reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar walks the records in reverse and leaves
//! `d loss / d var` on every variable that requires a gradient.

mod kernels;
mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub use tensor::Tensor;
