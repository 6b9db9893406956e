//! Numeric substrate: dense tensors, a reverse-mode differentiation tape,
//! parameter storage, Adam, and finite-difference gradient checking.

mod adam;
mod gradcheck;
mod graph;
mod kernels;
mod params;
mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GRAD_CHECK_SEED};
pub use graph::{Gradients, Graph, Mode, OpKind, Var, LAYER_NORM_EPS};
pub use params::{glorot_uniform, Bound, Dense, ParamId, ParamStore};
pub use tensor::Tensor;
