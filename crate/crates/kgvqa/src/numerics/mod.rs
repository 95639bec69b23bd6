//! Minimal dense/sparse tensor engine with reverse-mode gradients.
//!
//! f32 carries training; the identical code path at f64 backs every
//! finite-difference verification. Tensors are immutable values; a
//! [`tape::Tape`] records one forward pass and replays it backward in
//! deterministic order.

pub mod checkpoint;
pub mod gradcheck;
pub mod store;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_with_fault, GradCheckReport};
pub use store::{BoundParams, ParameterStore};
pub use tape::{Elementwise, Gradients, SparseMatrix, Tape, TensorId, BCE_EPS};
pub use tensor::{Real, Tensor};
