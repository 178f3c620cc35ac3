//! Dense tensors and a reverse-mode tape.

pub mod checkpoint;
pub mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{make_optimizer, Adam, Optimizer, OptimizerKind, Sgd};
pub use params::{he_normal, Param, ParamId, ParamStore};
pub use tape::{sigmoid, Gradients, Tape, Var, BCE_EPS};
pub use tensor::Tensor;
