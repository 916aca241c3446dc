use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cells::ModelConfig;
use crate::diffcore::AdamConfig;
use crate::error::{Error, Result};
use crate::gumbel::TemperatureSchedule;
use crate::sampler::SamplerConfig;

/// Every hyperparameter of a run. Loaded from JSON; missing keys take the
/// defaults below, unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Frames per training sample.
    pub l_e: usize,
    /// Prediction depth and history capacity.
    pub l_d: usize,
    pub progression_states: usize,
    pub window_size: usize,
    pub hidden: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub tau_initial: f64,
    pub tau_min: f64,
    /// Global-norm gradient clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub adaptive_sampling: bool,
    /// Keeps the decoder and feature head fixed at initialization.
    pub freeze_decoder: bool,
    /// Weight of an optional squared-error loss on predicted features.
    pub feature_regression: f64,
    /// Write an extra checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            l_e: 64,
            l_d: 8,
            progression_states: 4,
            window_size: 7,
            hidden: 64,
            lambda: 1.0,
            learning_rate: 0.0005,
            weight_decay: 0.001,
            batch_size: 16,
            epochs: 30,
            tau_initial: 5.0,
            tau_min: 0.1,
            grad_clip: 5.0,
            seed: 0,
            manifest: None,
            out_dir: PathBuf::from("runs/default"),
            adaptive_sampling: true,
            freeze_decoder: false,
            feature_regression: 0.0,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.l_e == 0 || self.l_d == 0 || self.hidden == 0 || self.batch_size == 0 {
            return fail("l_e, l_d, hidden and batch_size must be positive".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        self.sampler()?;
        if !(self.lambda >= 0.0) || !(self.feature_regression >= 0.0) {
            return fail("loss weights must be non-negative".into());
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return fail("learning_rate must be positive; weight_decay and grad_clip non-negative".into());
        }
        self.schedule()?;
        Ok(())
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        SamplerConfig::new(self.l_d, self.window_size, self.progression_states)
    }

    /// Anneals from `tau_initial` to `tau_min` over the configured epochs.
    pub fn schedule(&self) -> Result<TemperatureSchedule> {
        TemperatureSchedule::reaching_floor_at(self.tau_initial, self.tau_min, self.epochs.saturating_sub(1))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Model layout for data of dimension `feature_dim` with
    /// `action_classes` classes besides background.
    pub fn model(&self, feature_dim: usize, action_classes: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            feature_dim,
            hidden: self.hidden,
            num_classes: action_classes + 1,
            sampler: self.sampler()?,
            adaptive: self.adaptive_sampling,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
