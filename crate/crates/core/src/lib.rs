//! Streaming online action detection with progression-conditioned adaptive
//! sampling of supplementary features.
//!
//! Each incoming frame feature drives a recurrent detection cell. Before the
//! cell update, a decoder predicts the next `l_d` frame features, the model
//! estimates a discrete progression state of the ongoing action, and that
//! state selects which window of the history/predicted-future pool is
//! averaged into a supplementary feature.

pub mod cells;
pub mod data;
pub mod diffcore;
mod error;
pub mod gumbel;
pub mod harness;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod sampler;

pub use diffcore::{GradBuffer, ParamId, ParamSet, Tape, Tensor, Var};
pub use error::{Error, Result};
