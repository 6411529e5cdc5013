//! Minimal CPU building blocks for residual classifiers with hand-written
//! backward passes.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod tensor;

pub use activation::{mish, mish_grad};
pub use conv::Conv2d;
pub use linear::{argmax, cross_entropy_row, Linear};
pub use norm::GroupNorm;
pub use tensor::{Float, Param, Tensor};
