//! Dense tensors, reverse-mode differentiation, Adam and small MLPs.

mod adam;
mod checkpoint;
mod error;
pub mod gradcheck;
pub mod nn;
mod scalar;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use error::{NumError, Result};
pub use nn::{BoundMlp, Dense, Mlp, Module};
pub use scalar::Scalar;
pub use tape::{softmax_rows, Gradients, Kernel, Tape, Var};
pub use tensor::Tensor;
