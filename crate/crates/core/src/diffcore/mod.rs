//! Minimal reverse-mode differentiation: tensors, a recording tape and the
//! optimizer that consumes its gradients.

mod optim;
mod tape;
mod tensor;

pub use optim::{clip_global_norm, AdamConfig, OptimizerState};
pub use tape::{log_softmax, softmax, Elementwise, Gradients, Tape, Var, PROB_FLOOR};
pub use tensor::{GradBuffer, ParamId, ParamSet, Tensor};
