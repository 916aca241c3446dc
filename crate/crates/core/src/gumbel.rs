//! Discrete progression sampling: Gumbel noise, hard Gumbel-Max selection,
//! its temperature-controlled softmax relaxation, and the straight-through
//! combination of the two.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{softmax, Tape, Var};
use crate::error::{ensure_dim, Error, Result};

/// Uniform draws are clamped to `[U_CLAMP, 1 − U_CLAMP]` before the double log.
pub const U_CLAMP: f64 = 1e-12;

/// `−ln(−ln u)` with `u` clamped away from 0 and 1.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(U_CLAMP, 1.0 - U_CLAMP);
    -(-u.ln()).ln()
}

/// `count` i.i.d. standard Gumbel draws.
pub fn sample_gumbel<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<f64> {
    (0..count).map(|_| gumbel_from_uniform(rng.random::<f64>())).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

fn perturbed(log_probs: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    ensure_dim!(
        log_probs.len() == noise.len(),
        "{} log-probabilities but {} noise values",
        log_probs.len(),
        noise.len()
    );
    Ok(log_probs.iter().zip(noise).map(|(l, g)| l + g).collect())
}

/// Hard sample `argmax_i(log_probs_i + noise_i)`.
pub fn gumbel_max_select(log_probs: &[f64], noise: &[f64]) -> Result<usize> {
    ensure_dim!(log_probs.len() >= 2, "need at least two states, got {}", log_probs.len());
    Ok(argmax(&perturbed(log_probs, noise)?))
}

fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Contract(format!("temperature must be positive and finite, got {tau}")))
    }
}

/// `softmax((log_probs + noise) / tau)` on plain values.
pub fn gumbel_softmax_relax(log_probs: &[f64], noise: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_temperature(tau)?;
    let scaled: Vec<f64> = perturbed(log_probs, noise)?.iter().map(|v| v / tau).collect();
    Ok(softmax(&scaled))
}

/// Recorded version of [`gumbel_softmax_relax`], differentiable in `log_probs`.
pub fn relax_on_tape(tape: &mut Tape<'_>, log_probs: Var, noise: &[f64], tau: f64) -> Result<Var> {
    check_temperature(tau)?;
    ensure_dim!(
        tape.value(log_probs).len() == noise.len(),
        "{} log-probabilities but {} noise values",
        tape.value(log_probs).len(),
        noise.len()
    );
    let g = tape.constant_vec(noise.to_vec());
    let shifted = tape.add(log_probs, g)?;
    let scaled = tape.scale(shifted, 1.0 / tau);
    tape.softmax(scaled)
}

/// Forward value `hard_one_hot`, gradient of `relaxed`.
pub fn straight_through(tape: &mut Tape<'_>, hard_one_hot: &[f64], relaxed: Var) -> Result<Var> {
    let ones: Vec<usize> = hard_one_hot
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect();
    if ones.len() != 1 || hard_one_hot[ones[0]] != 1.0 {
        return Err(Error::Contract("hard sample is not a one-hot vector".into()));
    }
    let relaxed_max = argmax(tape.value(relaxed));
    if relaxed_max != ones[0] {
        return Err(Error::Contract(format!(
            "relaxed argmax {relaxed_max} disagrees with hard sample {}",
            ones[0]
        )));
    }
    tape.straight_through(hard_one_hot.to_vec(), relaxed)
}

/// Everything produced by one progression draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressionDistribution {
    /// Estimated distribution over progression states.
    pub soft_estimate: Vec<f64>,
    /// Gumbel-softmax relaxation; equals `soft_estimate` in evaluation.
    pub relaxed: Vec<f64>,
    pub hard_sample: usize,
    pub one_hot: Vec<f64>,
    pub temperature: f64,
}

/// How the hard progression state is chosen.
#[derive(Debug)]
pub enum Draw<'a, R: Rng + ?Sized> {
    /// Gumbel-Max with fresh noise, relaxed at `tau`.
    Noisy { tau: f64, rng: &'a mut R },
    /// Noise-free argmax of the estimate.
    Greedy,
}

/// Draws a progression state from `log_probs`.
///
/// Returns the distribution summary and, for noisy draws, the recorded
/// relaxed vector that carries gradients back into `log_probs`.
pub fn draw_progression<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    log_probs: Var,
    draw: Draw<'_, R>,
) -> Result<(ProgressionDistribution, Option<Var>)> {
    let lp = tape.value(log_probs).to_vec();
    let soft_estimate: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    match draw {
        Draw::Noisy { tau, rng } => {
            let noise = sample_gumbel(lp.len(), rng);
            let hard_sample = gumbel_max_select(&lp, &noise)?;
            let relaxed = relax_on_tape(tape, log_probs, &noise, tau)?;
            let dist = ProgressionDistribution {
                soft_estimate,
                relaxed: tape.value(relaxed).to_vec(),
                hard_sample,
                one_hot: one_hot(hard_sample, lp.len()),
                temperature: tau,
            };
            Ok((dist, Some(relaxed)))
        }
        Draw::Greedy => {
            ensure_dim!(lp.len() >= 2, "need at least two states, got {}", lp.len());
            let hard_sample = argmax(&lp);
            let dist = ProgressionDistribution {
                relaxed: soft_estimate.clone(),
                soft_estimate,
                hard_sample,
                one_hot: one_hot(hard_sample, lp.len()),
                temperature: 0.0,
            };
            Ok((dist, None))
        }
    }
}

/// Per-epoch exponential annealing with a floor:
/// `τ(e) = max(floor, initial · exp(−decay · e))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub initial: f64,
    pub floor: f64,
    pub decay: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule {
            initial: 5.0,
            floor: 0.1,
            decay: 0.0,
        }
    }
}

impl TemperatureSchedule {
    /// Chooses the decay rate so that `τ(final_epoch) == floor`.
    pub fn reaching_floor_at(initial: f64, floor: f64, final_epoch: u64) -> Result<Self> {
        if !(initial > 0.0 && floor > 0.0 && floor <= initial) {
            return Err(Error::Config(format!(
                "temperature schedule needs 0 < floor <= initial, got floor {floor}, initial {initial}"
            )));
        }
        let decay = if final_epoch == 0 {
            0.0
        } else {
            (initial / floor).ln() / final_epoch as f64
        };
        Ok(TemperatureSchedule { initial, floor, decay })
    }

    pub fn at(&self, epoch: u64) -> f64 {
        if epoch == 0 {
            return self.initial.max(self.floor);
        }
        (self.initial * (-self.decay * epoch as f64).exp()).max(self.floor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gumbel_transform_fixed_points() {
        let e = std::f64::consts::E;
        assert!(gumbel_from_uniform(1.0 / e).abs() < 1e-15);
        assert!((gumbel_from_uniform((-e).exp()) + 1.0).abs() < 1e-12);
        assert!(gumbel_from_uniform(0.0).is_finite());
        assert!(gumbel_from_uniform(1.0).is_finite());
    }

    #[test]
    fn gumbel_mean_is_euler_mascheroni() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mean = sample_gumbel(n, &mut rng).iter().sum::<f64>() / n as f64;
        assert!((mean - 0.577_215_664_9).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn max_select_cases() {
        assert_eq!(gumbel_max_select(&[0.1, 0.5, 0.2], &[0.0; 3]).unwrap(), 1);
        let uniform = [(1.0f64 / 3.0).ln(); 3];
        assert_eq!(gumbel_max_select(&uniform, &[0.0, 1.0, 0.0]).unwrap(), 1);
        assert_eq!(gumbel_max_select(&[0.0, 0.0, 0.0], &[0.0; 3]).unwrap(), 0);
        assert!(gumbel_max_select(&[0.0], &[0.0]).is_err());
        assert!(gumbel_max_select(&[0.0, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn relaxation_limits() {
        let lp = [0.2f64.ln(), 0.5f64.ln(), 0.3f64.ln()];
        let noise = [0.4, -0.3, 0.9];
        let hard = gumbel_max_select(&lp, &noise).unwrap();

        let cold = gumbel_softmax_relax(&lp, &noise, 1e-4).unwrap();
        assert!(cold[hard] > 1.0 - 1e-6);
        let hot = gumbel_softmax_relax(&lp, &noise, 1e4).unwrap();
        let spread = hot.iter().cloned().fold(f64::MIN, f64::max) - hot.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-3);
        for r in [&cold, &hot] {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(gumbel_softmax_relax(&lp, &noise, 0.0).is_err());
        assert!(gumbel_softmax_relax(&lp, &noise, -1.0).is_err());
    }

    #[test]
    fn straight_through_rejects_mismatch() {
        let mut tape = Tape::new();
        let relaxed = tape.constant_vec(vec![0.7, 0.2, 0.1]);
        assert!(straight_through(&mut tape, &[1.0, 0.0, 0.0], relaxed).is_ok());
        assert!(straight_through(&mut tape, &[0.0, 1.0, 0.0], relaxed).is_err());
        assert!(straight_through(&mut tape, &[1.0, 1.0, 0.0], relaxed).is_err());
    }

    #[test]
    fn straight_through_degenerate_relaxation() {
        let mut tape = Tape::new();
        let relaxed = tape.constant_vec(vec![0.0, 1.0]);
        let out = straight_through(&mut tape, &[0.0, 1.0], relaxed).unwrap();
        assert_eq!(tape.value(out), tape.value(relaxed));
    }

    #[test]
    fn schedule_starts_at_five_and_hits_floor() {
        let s = TemperatureSchedule::reaching_floor_at(5.0, 0.1, 29).unwrap();
        assert_eq!(s.at(0), 5.0);
        assert!((s.at(29) - 0.1).abs() < 1e-12);
        for e in 0..100 {
            assert!(s.at(e + 1) <= s.at(e));
            assert!(s.at(e) >= 0.1);
        }
        assert!(TemperatureSchedule::reaching_floor_at(1.0, 2.0, 3).is_err());
    }
}
