//! Plain-f64 forward pass of the detection model, written without the tape,
//! used as a finite-difference oracle for tape gradients.

use std::collections::VecDeque;

use lapnet::cells::{lapnet_step, LapNet, ModelConfig, StepMode};
use lapnet::data::future_labels;
use lapnet::diffcore::{GradBuffer, ParamSet, Tape};
use lapnet::losses::{loss_cls, loss_pre, mean_of, total_loss};
use lapnet::memory::HistoryStack;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{central_diff, close};

/// Name, shape and offset of each parameter inside a flat vector.
pub struct Layout {
    entries: Vec<(String, Vec<usize>, usize)>,
}

impl Layout {
    pub fn flatten(params: &ParamSet) -> (Layout, Vec<f64>) {
        let mut entries = Vec::new();
        let mut flat = Vec::new();
        for (_, name, t) in params.iter() {
            entries.push((name.to_string(), t.shape().to_vec(), flat.len()));
            flat.extend_from_slice(t.data());
        }
        (Layout { entries }, flat)
    }

    pub fn get<'a>(&self, theta: &'a [f64], name: &str) -> &'a [f64] {
        let (_, shape, off) = self
            .entries
            .iter()
            .find(|(n, _, _)| n == name)
            .unwrap_or_else(|| panic!("no parameter {name}"));
        &theta[*off..*off + shape.iter().product::<usize>()]
    }

    pub fn names(&self) -> impl Iterator<Item = (&str, usize, usize)> {
        self.entries
            .iter()
            .map(|(n, s, o)| (n.as_str(), *o, s.iter().product::<usize>()))
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    assert_eq!(w.len(), b.len() * cols);
    (0..b.len())
        .map(|r| b[r] + (0..cols).map(|c| w[r * cols + c] * x[c]).sum::<f64>())
        .collect()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

pub fn gru(layout: &Layout, theta: &[f64], prefix: &str, h: &[f64], x: &[f64]) -> Vec<f64> {
    let p = |n: &str| layout.get(theta, &format!("{prefix}.{n}"));
    let hx = cat(h, x);
    let z: Vec<f64> = affine(p("w_update"), p("b_update"), &hx).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = affine(p("w_reset"), p("b_reset"), &hx).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = affine(p("w_candidate"), p("b_candidate"), &cat(&rh, x))
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..h.len()).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect()
}

fn mean_of_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v / rows.len() as f64;
        }
    }
    out
}

/// Per-step values fixed at the expansion point: the hard sample, the hard
/// window mean, and the soft mixture.
#[derive(Debug, Clone)]
pub struct AnchorStep {
    pub hard: usize,
    pub hard_value: Vec<f64>,
    pub soft_value: Vec<f64>,
}

/// A short labelled clip with pre-drawn Gumbel noise.
pub struct Problem {
    pub config: ModelConfig,
    pub frames: Vec<Vec<f64>>,
    pub labels: Vec<u16>,
    pub lambda: f64,
    pub tau: f64,
    pub noise_seed: u64,
}

impl Problem {
    fn noise(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let p = self.config.sampler.states;
        self.frames
            .iter()
            .map(|_| {
                (0..p)
                    .map(|_| {
                        let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
                        -(-u.ln()).ln()
                    })
                    .collect()
            })
            .collect()
    }

    /// Mean per-frame `L_cls + λ·L_pre` with parameters `theta`. With an
    /// anchor, the supplementary feature is `hard(θ₀) + soft(θ) − soft(θ₀)`,
    /// the function whose gradient straight-through training follows.
    pub fn loss(&self, layout: &Layout, theta: &[f64], anchor: Option<&[AnchorStep]>) -> (f64, Vec<AnchorStep>) {
        let cfg = &self.config;
        let (l_d, k, states) = (cfg.sampler.history, cfg.sampler.window, cfg.sampler.states);
        let stride = (2 * l_d - k) / (states - 1);
        let noise = self.noise();
        let p = |n: &str| layout.get(theta, n);

        let mut h = vec![0.0; cfg.hidden];
        let mut history: VecDeque<Vec<f64>> = (0..l_d).map(|_| vec![0.0; cfg.feature_dim]).collect();
        let mut total = 0.0;
        let mut steps = Vec::new();
        let t_len = self.frames.len();
        for (t, f) in self.frames.iter().enumerate() {
            let mut hd = h.clone();
            let mut input = f.clone();
            let mut futures = Vec::new();
            let mut future_probs = Vec::new();
            for _ in 0..l_d {
                hd = gru(layout, theta, "decoder", &hd, &input);
                let feat = affine(p("feature_head.weight"), p("feature_head.bias"), &hd);
                future_probs.push(softmax(&affine(p("classifier.weight"), p("classifier.bias"), &hd)));
                futures.push(feat.clone());
                input = feat;
            }
            let pool: Vec<Vec<f64>> = history.iter().cloned().chain(futures).collect();
            let means: Vec<Vec<f64>> = (0..states)
                .map(|s| mean_of_rows(&pool[s * stride..s * stride + k]))
                .collect();

            let fs = if cfg.adaptive {
                let lp = log_softmax(&affine(p("progression.weight"), p("progression.bias"), &h));
                let perturbed: Vec<f64> = lp.iter().zip(&noise[t]).map(|(a, b)| a + b).collect();
                let relaxed = softmax(&perturbed.iter().map(|v| v / self.tau).collect::<Vec<_>>());
                let mut soft = vec![0.0; cfg.feature_dim];
                for (w, m) in relaxed.iter().zip(&means) {
                    for (s, v) in soft.iter_mut().zip(m) {
                        *s += w * v;
                    }
                }
                match anchor {
                    Some(a) => {
                        let a = &a[t];
                        steps.push(a.clone());
                        (0..soft.len()).map(|i| a.hard_value[i] + soft[i] - a.soft_value[i]).collect()
                    }
                    None => {
                        let mut hard = 0;
                        for i in 1..states {
                            if perturbed[i] > perturbed[hard] {
                                hard = i;
                            }
                        }
                        steps.push(AnchorStep {
                            hard,
                            hard_value: means[hard].clone(),
                            soft_value: soft,
                        });
                        means[hard].clone()
                    }
                }
            } else {
                means[states - 1].clone()
            };

            h = gru(layout, theta, "detection", &h, &cat(f, &fs));
            let c = softmax(&affine(p("classifier.weight"), p("classifier.bias"), &h));
            let l_cls = -c[self.labels[t] as usize].ln();
            let l_pre = (0..l_d)
                .map(|i| -future_probs[i][self.labels[(t + i).min(t_len - 1)] as usize].ln())
                .sum::<f64>()
                / l_d as f64;
            total += l_cls + self.lambda * l_pre;
            history.pop_front();
            history.push_back(f.clone());
        }
        (total / t_len as f64, steps)
    }

    /// Loss and parameter gradients from the tape, with noise drawn from
    /// the same seeded stream the reference uses.
    pub fn tape_gradients(&self, model: &LapNet) -> (f64, GradBuffer) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let mut tape = Tape::with_params(model.params());
        let bound = model.bind(&mut tape);
        let mut h = tape.constant_vec(model.initial_hidden());
        let mut history = HistoryStack::new(self.config.history(), self.config.feature_dim);
        let mut totals = Vec::new();
        for (t, f) in self.frames.iter().enumerate() {
            let out = lapnet_step(
                &mut tape,
                &bound,
                &self.config,
                h,
                &mut history,
                f,
                StepMode::Train {
                    tau: self.tau,
                    rng: &mut rng,
                },
            )
            .unwrap();
            let cls = loss_cls(&mut tape, out.probs, self.labels[t] as usize).unwrap();
            let targets = future_labels(&self.labels, t, self.config.history());
            let pre = loss_pre(&mut tape, &out.future.class_probs, &targets).unwrap();
            totals.push(total_loss(&mut tape, cls, pre, self.lambda).unwrap());
            h = out.hidden;
        }
        let loss = mean_of(&mut tape, &totals).unwrap();
        let mut grads = GradBuffer::zeros_like(model.params());
        tape.backward(loss).unwrap().accumulate_into(&mut grads);
        (tape.scalar(loss), grads)
    }
}

/// Outcome of comparing tape gradients with reference finite differences.
#[derive(Debug)]
pub struct FullModelCheck {
    pub checked: usize,
    pub failures: Vec<String>,
    pub forward_gap: f64,
    pub max_rel_err: f64,
}

/// Checks every parameter coordinate of `model` on `problem`.
pub fn check_full_model(model: &LapNet, problem: &Problem, rtol: f64) -> FullModelCheck {
    let (layout, theta) = Layout::flatten(model.params());
    let (tape_loss, grads) = problem.tape_gradients(model);
    let (ref_loss, anchor) = problem.loss(&layout, &theta, None);
    let numeric = central_diff(&theta, 1e-6, |probe| problem.loss(&layout, probe, Some(&anchor)).0);

    let mut failures = Vec::new();
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for (id, name, _) in model.params().iter() {
        let analytic = grads.get(id).data();
        let (_, off, len) = layout.names().find(|(n, _, _)| *n == name).unwrap();
        for i in 0..len {
            let (a, n) = (analytic[i], numeric[off + i]);
            checked += 1;
            let scale = a.abs().max(n.abs());
            if scale > 1e-6 {
                max_rel_err = max_rel_err.max((a - n).abs() / scale);
            }
            if !close(a, n, rtol, 1e-8) {
                failures.push(format!("{name}[{i}]: analytic {a:.9e}, numeric {n:.9e}"));
            }
        }
    }
    FullModelCheck {
        checked,
        failures,
        forward_gap: (tape_loss - ref_loss).abs(),
        max_rel_err,
    }
}

/// The three-frame tiny problem used for the full-model gradient check.
pub fn tiny_problem(adaptive: bool, seed: u64) -> (LapNet, Problem) {
    let config = super::tiny_config(adaptive);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LapNet::new(config, &mut rng).unwrap();
    // Non-zero biases so their gradients are exercised from a generic point.
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let frames = (0..3)
        .map(|_| (0..config.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let labels = (0..3).map(|_| rng.random_range(0..config.num_classes as u16)).collect();
    let problem = Problem {
        config,
        frames,
        labels,
        lambda: 0.7,
        tau: 0.8,
        noise_seed: seed + 1000,
    };
    (model, problem)
}
