use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sequence::FeatureSequence;
use crate::error::{Error, Result};

/// Parameters of the synthetic benchmark.
///
/// Every class `c` owns a prototype `μ_c` and, for actions, a drift `δ_c`.
/// Frame `j` of an action segment of length `L` is `μ_c + (j/L)·δ_c + ε`,
/// background frames are `μ_0 + ε`, with `ε ~ N(0, σ²I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Action classes, background excluded.
    pub num_classes: u32,
    pub feature_dim: usize,
    pub num_sequences: usize,
    pub num_test_sequences: usize,
    /// Inclusive range of sequence lengths.
    pub length: [usize; 2],
    pub action_length: [usize; 2],
    pub background_length: [usize; 2],
    /// Quantizes progression `j/L` to this many levels; `None` keeps it linear.
    pub phases: Option<u32>,
    /// Scale of the prototype entries.
    pub prototype_scale: f64,
    /// Scale of the drift entries.
    pub drift_scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 5,
            feature_dim: 32,
            num_sequences: 60,
            num_test_sequences: 20,
            length: [150, 200],
            action_length: [16, 40],
            background_length: [8, 24],
            phases: None,
            prototype_scale: 1.0,
            drift_scale: 1.5,
            noise: 5.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: [usize; 2]| r[0] >= 1 && r[0] <= r[1];
        if self.num_classes == 0 || self.feature_dim == 0 {
            return Err(Error::Config("need at least one action class and one feature".into()));
        }
        if !range_ok(self.length) || !range_ok(self.action_length) || !range_ok(self.background_length) {
            return Err(Error::Config("length ranges must satisfy 1 <= lo <= hi".into()));
        }
        if self.length[0] <= self.background_length[1] {
            return Err(Error::Config(
                "shortest sequence must exceed the longest background gap so every sequence holds an action".into(),
            ));
        }
        if self.phases == Some(0) {
            return Err(Error::Config("phases must be positive when set".into()));
        }
        if !(self.noise >= 0.0) || !self.prototype_scale.is_finite() || !self.drift_scale.is_finite() {
            return Err(Error::Config("noise and scales must be finite, noise non-negative".into()));
        }
        if u16::try_from(self.num_classes).is_err() {
            return Err(Error::Config("labels must fit in 16 bits".into()));
        }
        Ok(())
    }
}

/// Class prototypes shared by every generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    /// `means[c]` for `c` in `0..=C`; index 0 is background.
    pub means: Vec<Vec<f64>>,
    /// `drifts[c]`; the background drift is zero.
    pub drifts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub prototypes: Prototypes,
    pub train: Vec<FeatureSequence>,
    pub test: Vec<FeatureSequence>,
}

impl Prototypes {
    fn draw(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut vector = |scale: f64| -> Vec<f64> {
            (0..cfg.feature_dim)
                .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut *rng))
                .collect()
        };
        let classes = cfg.num_classes as usize + 1;
        let means = (0..classes).map(|_| vector(cfg.prototype_scale)).collect();
        let mut drifts: Vec<Vec<f64>> = (1..classes).map(|_| vector(cfg.drift_scale)).collect();
        drifts.insert(0, vec![0.0; cfg.feature_dim]);
        Prototypes { means, drifts }
    }

    /// Noise-free feature of class `class` at progression `progress ∈ [0, 1)`.
    pub fn clean(&self, class: usize, progress: f64) -> Vec<f64> {
        self.means[class]
            .iter()
            .zip(&self.drifts[class])
            .map(|(m, d)| m + progress * d)
            .collect()
    }
}

fn progress(j: usize, len: usize, phases: Option<u32>) -> f64 {
    match phases {
        None => j as f64 / len as f64,
        Some(k) => {
            let k = k as usize;
            (j * k / len) as f64 / k as f64
        }
    }
}

fn generate_sequence(
    cfg: &SyntheticConfig,
    protos: &Prototypes,
    name: String,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureSequence> {
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let total = rng.random_range(cfg.length[0]..=cfg.length[1]);
    let mut features = Vec::with_capacity(total * cfg.feature_dim);
    let mut labels = Vec::with_capacity(total);
    let mut background = true;
    while labels.len() < total {
        let (class, len) = if background {
            (0, rng.random_range(cfg.background_length[0]..=cfg.background_length[1]))
        } else {
            let class = rng.random_range(1..=cfg.num_classes as usize);
            (class, rng.random_range(cfg.action_length[0]..=cfg.action_length[1]))
        };
        for j in 0..len.min(total - labels.len()) {
            let p = if class == 0 { 0.0 } else { progress(j, len, cfg.phases) };
            for v in protos.clean(class, p) {
                let eps = if cfg.noise > 0.0 { noise.sample(&mut *rng) } else { 0.0 };
                features.push((v + eps) as f32);
            }
            labels.push(class as u16);
        }
        background = !background;
    }
    FeatureSequence::new(name, cfg.num_classes, cfg.feature_dim, features, labels)
}

/// Deterministic in `cfg` (seed included).
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes = Prototypes::draw(cfg, &mut rng);
    let mut split = |prefix: &str, count: usize| {
        (0..count)
            .map(|i| generate_sequence(cfg, &prototypes, format!("{prefix}_{i:04}"), &mut rng))
            .collect::<Result<Vec<_>>>()
    };
    let train = split("train", cfg.num_sequences)?;
    let test = split("test", cfg.num_test_sequences)?;
    Ok(SyntheticDataset { prototypes, train, test })
}
