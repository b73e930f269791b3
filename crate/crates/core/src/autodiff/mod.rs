//! Reverse-mode differentiation, parameter storage and optimizers.

pub mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use graph::{Graph, Var};
pub use optim::{optimizer_step, Optimizer};
pub use params::{Param, ParamStore};
pub use tensor::Tensor;
