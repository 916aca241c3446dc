//! Request and response bodies shared by the HTTP service and its clients.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::ablate::Sweep;
use super::config::RunConfig;
use crate::cells::FrameOutput;
use crate::data::SyntheticConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    pub config: RunConfig,
    #[serde(default)]
    pub resume: Option<PathBuf>,
}

fn default_split() -> String {
    "test".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRequest {
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_split")]
    pub split: String,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateRequest {
    pub config: RunConfig,
    pub sweep: Sweep,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataRequest {
    #[serde(default)]
    pub config: SyntheticConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenStreamRequest {
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub id: u64,
    pub feature_dim: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRequest {
    pub frame: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamFrame {
    /// Zero-based index of this frame in its stream.
    pub index: usize,
    pub output: FrameOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// The request or its inputs were invalid.
    Validation,
    /// The request was valid but running it failed.
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
}

impl From<&crate::Error> for ErrorBody {
    fn from(err: &crate::Error) -> Self {
        ErrorBody {
            kind: if err.is_validation() {
                ErrorKind::Validation
            } else {
                ErrorKind::Runtime
            },
            message: err.to_string(),
        }
    }
}
