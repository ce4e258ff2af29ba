//! Differentiable tensor core: dense double-precision tensors, a recorded
//! op sequence with reverse-mode gradients, parameter storage, and seeded
//! initialization.

mod linalg;
mod params;
mod tape;
mod tensor;

pub mod init;

pub use params::{Binding, Param, ParamId, ParamSet};
pub use tape::{BatchNormState, Mode, Tape, Var};
pub use tensor::Tensor;
