//! Dense tensors, a define-by-run differentiation tape, and Adam.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState, Direction};
pub use tape::{leaky_relu, Tape, Var, LEAKY_SLOPE};
pub use tensor::Tensor;
