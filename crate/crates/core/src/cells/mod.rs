//! Recurrent machinery: the GRU cell, the progression head, the future
//! decoder sharing the detection classifier, and the full detection step.

mod gru;
mod model;

pub use gru::{gru_step, BoundGru, GruParameters};
pub use model::{
    estimate_progression, lapnet_step, predict_future, BoundLapNet, BoundLinear, FrameOutput, FuturePrediction,
    LapNet, LapNetParameters, LinearParameters, ModelConfig, StepMode, StepOutput, StreamState,
};
