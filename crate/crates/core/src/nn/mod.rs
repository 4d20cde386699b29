//! Differentiable array substrate: tensors, a reverse-mode tape, AdamW and
//! finite-difference verification.

pub mod adamw;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport};
pub use graph::{evaluate, evaluate_with_gradients, Graph, Var};
pub use params::{Param, ParamGrads, ParamId, ParamStore};
pub use tensor::{Real, Tensor};
