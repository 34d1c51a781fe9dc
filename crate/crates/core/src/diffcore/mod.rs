//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Only the operations the network and its losses need are provided. A
//! [`Tape`] is built fresh for every forward pass and discarded afterwards.

mod tape;
mod tensor;

pub use tape::{huber_value, Tape, Var, NORM_FLOOR};
pub use tensor::{pairwise_sum, Tensor};
