//! Progression-conditioned window selection over the feature pool.
//!
//! The pool of `2·l_d` frames is tiled by `P` contiguous windows of `K`
//! frames whose starts are `s = ⌊(2·l_d − K)/(P − 1)⌋` apart. State 0 is the
//! most history-biased window and state `P − 1` the most future-biased.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::error::{ensure_dim, Error, Result};
use crate::gumbel::{argmax, ProgressionDistribution};
use crate::memory::FeaturePool;

/// `⌊(2·l_d − K)/(P − 1)⌋`.
pub fn compute_stride(history: usize, window: usize, states: usize) -> Result<usize> {
    if states < 2 {
        return Err(Error::Config(format!("need at least 2 progression states, got {states}")));
    }
    if history == 0 {
        return Err(Error::Config("history length must be positive".into()));
    }
    if window == 0 || window > 2 * history {
        return Err(Error::Config(format!(
            "window size {window} must lie in 1..={}",
            2 * history
        )));
    }
    Ok((2 * history - window) / (states - 1))
}

/// Pool indices `[p·s, p·s + K)`.
pub fn window_indices(state: usize, stride: usize, window: usize) -> Range<usize> {
    let start = state * stride;
    start..start + window
}

/// Window geometry: history length `l_d`, window size `K`, state count `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub history: usize,
    pub window: usize,
    pub states: usize,
}

impl SamplerConfig {
    pub fn new(history: usize, window: usize, states: usize) -> Result<Self> {
        compute_stride(history, window, states)?;
        Ok(SamplerConfig {
            history,
            window,
            states,
        })
    }

    pub fn stride(&self) -> usize {
        compute_stride(self.history, self.window, self.states).expect("validated at construction")
    }

    pub fn pool_len(&self) -> usize {
        2 * self.history
    }

    pub fn window(&self, state: usize) -> Result<Range<usize>> {
        if state >= self.states {
            return Err(Error::Contract(format!(
                "progression state {state} out of range for {} states",
                self.states
            )));
        }
        Ok(window_indices(state, self.stride(), self.window))
    }

    /// The window used when adaptive sampling is disabled.
    pub fn most_future_state(&self) -> usize {
        self.states - 1
    }
}

/// Average of the pool frames in `range`.
pub fn aggregate_window(tape: &mut Tape<'_>, pool: &FeaturePool, range: Range<usize>) -> Result<Var> {
    ensure_dim!(
        range.start < range.end && range.end <= pool.len(),
        "window {range:?} outside pool of {} frames",
        pool.len()
    );
    tape.mean_rows(&pool.frames()[range])
}

/// Supplementary feature together with the window that produced its value.
#[derive(Debug, Clone)]
pub struct Supplementary {
    pub feature: Var,
    pub window: Range<usize>,
}

/// Supplementary feature for one step.
///
/// Without `relaxed` the hard window is aggregated directly. With it, the
/// forward value is still the hard window's mean, while gradients follow the
/// soft mixture `Σ_i relaxed_i · mean(window_i)`: into the progression
/// logits through `relaxed`, and into every pool frame through every window
/// containing it.
pub fn adaptive_supplementary(
    tape: &mut Tape<'_>,
    pool: &FeaturePool,
    dist: &ProgressionDistribution,
    relaxed: Option<Var>,
    cfg: &SamplerConfig,
) -> Result<Supplementary> {
    ensure_dim!(
        pool.len() == cfg.pool_len(),
        "pool has {} frames, sampler expects {}",
        pool.len(),
        cfg.pool_len()
    );
    let hard = cfg.window(dist.hard_sample)?;
    let Some(relaxed) = relaxed else {
        let feature = aggregate_window(tape, pool, hard.clone())?;
        return Ok(Supplementary { feature, window: hard });
    };

    ensure_dim!(
        tape.value(relaxed).len() == cfg.states,
        "relaxed distribution has {} entries for {} states",
        tape.value(relaxed).len(),
        cfg.states
    );
    let relaxed_max = argmax(tape.value(relaxed));
    if relaxed_max != dist.hard_sample {
        return Err(Error::Contract(format!(
            "relaxed argmax {relaxed_max} disagrees with hard sample {}",
            dist.hard_sample
        )));
    }
    let means = (0..cfg.states)
        .map(|p| aggregate_window(tape, pool, cfg.window(p)?))
        .collect::<Result<Vec<_>>>()?;
    let soft = tape.weighted_sum(relaxed, &means)?;
    let value = tape.value(means[dist.hard_sample]).to_vec();
    let feature = tape.straight_through(value, soft)?;
    Ok(Supplementary { feature, window: hard })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use crate::gumbel::one_hot;
    use crate::memory::{build_pool, HistoryStack};

    #[test]
    fn paper_configurations() {
        assert_eq!(compute_stride(8, 7, 4).unwrap(), 3);
        assert_eq!(compute_stride(8, 9, 4).unwrap(), 2);
        assert_eq!(compute_stride(8, 3, 4).unwrap(), 4);
    }

    #[test]
    fn stride_errors() {
        assert!(compute_stride(8, 7, 1).is_err());
        assert!(compute_stride(8, 17, 4).is_err());
        assert!(compute_stride(8, 0, 4).is_err());
        assert!(SamplerConfig::new(8, 7, 4).unwrap().window(4).is_err());
    }

    #[test]
    fn window_examples() {
        assert_eq!(window_indices(0, 3, 7), 0..7);
        let cfg = SamplerConfig::new(8, 7, 4).unwrap();
        assert_eq!(cfg.window(3).unwrap(), 9..16);
        assert_eq!(cfg.most_future_state(), 3);
    }

    fn pool_of(tape: &mut Tape<'_>, frames: &[Vec<f64>]) -> FeaturePool {
        let l_d = frames.len() / 2;
        let mut h = HistoryStack::new(l_d, frames[0].len());
        for f in &frames[..l_d] {
            h.push(f).unwrap();
        }
        let futures: Vec<Var> = frames[l_d..].iter().map(|f| tape.input(Tensor::vector(f.clone()))).collect();
        build_pool(tape, &h, &futures).unwrap()
    }

    #[test]
    fn constant_pool_gives_constant_window() {
        let mut tape = Tape::new();
        let frames = vec![vec![0.5, 2.0]; 6];
        let pool = pool_of(&mut tape, &frames);
        for range in [0..3, 2..6, 1..2] {
            let m = aggregate_window(&mut tape, &pool, range).unwrap();
            assert_eq!(tape.value(m), &[0.5, 2.0]);
        }
        let single = aggregate_window(&mut tape, &pool, 4..5).unwrap();
        assert_eq!(tape.value(single), tape.value(pool.frames()[4]));
        assert!(aggregate_window(&mut tape, &pool, 4..7).is_err());
    }

    fn dist(hard: usize, relaxed: Vec<f64>) -> ProgressionDistribution {
        ProgressionDistribution {
            soft_estimate: relaxed.clone(),
            one_hot: one_hot(hard, relaxed.len()),
            relaxed,
            hard_sample: hard,
            temperature: 1.0,
        }
    }

    #[test]
    fn one_hot_relaxation_matches_hard_window() {
        let mut tape = Tape::new();
        let frames: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let pool = pool_of(&mut tape, &frames);
        let cfg = SamplerConfig::new(4, 3, 3).unwrap();
        for p in 0..3 {
            let oh = one_hot(p, 3);
            let r = tape.input(Tensor::vector(oh.clone()));
            let d = dist(p, oh);
            let soft = adaptive_supplementary(&mut tape, &pool, &d, Some(r), &cfg).unwrap();
            let hard = adaptive_supplementary(&mut tape, &pool, &d, None, &cfg).unwrap();
            assert_eq!(tape.value(soft.feature), tape.value(hard.feature));
            let direct = aggregate_window(&mut tape, &pool, cfg.window(p).unwrap()).unwrap();
            assert_eq!(tape.value(hard.feature), tape.value(direct));
        }
    }

    #[test]
    fn forward_value_ignores_relaxation_sharpness() {
        let mut tape = Tape::new();
        let frames: Vec<Vec<f64>> = (0..8).map(|i| vec![(i as f64).sin()]).collect();
        let pool = pool_of(&mut tape, &frames);
        let cfg = SamplerConfig::new(4, 3, 3).unwrap();
        let a = tape.input(Tensor::vector(vec![0.2, 0.5, 0.3]));
        let b = tape.input(Tensor::vector(vec![0.01, 0.98, 0.01]));
        let fa = adaptive_supplementary(&mut tape, &pool, &dist(1, vec![0.2, 0.5, 0.3]), Some(a), &cfg).unwrap();
        let fb = adaptive_supplementary(&mut tape, &pool, &dist(1, vec![0.01, 0.98, 0.01]), Some(b), &cfg).unwrap();
        assert_eq!(tape.value(fa.feature), tape.value(fb.feature));
        assert_eq!(fa.window, 2..5);
    }

    #[test]
    fn mismatched_hard_sample_is_rejected() {
        let mut tape = Tape::new();
        let frames = vec![vec![1.0]; 8];
        let pool = pool_of(&mut tape, &frames);
        let cfg = SamplerConfig::new(4, 3, 3).unwrap();
        let r = tape.input(Tensor::vector(vec![0.6, 0.3, 0.1]));
        let err = adaptive_supplementary(&mut tape, &pool, &dist(2, vec![0.6, 0.3, 0.1]), Some(r), &cfg);
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}
