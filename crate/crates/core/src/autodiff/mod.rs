//! Dense-tensor automatic differentiation.
//!
//! Reverse mode runs over a [`Tape`]; forward mode ([`forward`]) records
//! tangents on the same tape so directional derivatives stay differentiable.

pub mod forward;
mod tape;
mod tensor;

pub use forward::{jvp, jvp_tensors, Dual, DualTensor};
pub use tape::{BinaryKind, Gradients, Tape, UnaryKind, Var};
pub use tensor::Tensor;

