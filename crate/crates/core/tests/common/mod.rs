#![allow(dead_code)]

pub mod reference;

use lapnet::cells::ModelConfig;
use lapnet::data::{generate_synthetic, FeatureSequence, SyntheticConfig};
use lapnet::diffcore::{Tape, Tensor, Var};
use lapnet::harness::RunConfig;
use lapnet::sampler::SamplerConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a − n| ≤ rtol·max(|a|, |n|) + atol`.
pub fn close(analytic: f64, numeric: f64, rtol: f64, atol: f64) -> bool {
    (analytic - numeric).abs() <= rtol * analytic.abs().max(numeric.abs()) + atol
}

/// Central difference of `f` at every coordinate of `x`.
pub fn central_diff(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Gradient check of a tape expression built by `build` from input tensors
/// of `shapes`. The scalar loss is `Σ proj ⊙ out` with a random projection,
/// so every output coordinate is exercised. Returns the worst violation
/// description, or `None` when every coordinate passes.
pub fn check_op(
    seed: u64,
    shapes: &[Vec<usize>],
    sample: impl Fn(&mut ChaCha8Rng, usize) -> Vec<f64>,
    build: impl Fn(&mut Tape<'_>, &[Var]) -> Var,
    rtol: f64,
) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = shapes.iter().map(|s| sample(&mut rng, s.iter().product())).collect();

    let eval = |vals: &[Vec<f64>], proj: Option<&[f64]>| -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals
            .iter()
            .zip(shapes)
            .map(|(v, s)| tape.input(Tensor::new(s.clone(), v.clone()).unwrap()))
            .collect();
        let out = build(&mut tape, &vars);
        let out_vals = tape.value(out).to_vec();
        let Some(proj) = proj else {
            return (0.0, out_vals, Vec::new());
        };
        let p = tape.constant(Tensor::new(tape.shape(out).to_vec(), proj.to_vec()).unwrap());
        let prod = tape.mul(out, p).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        let g = vars
            .iter()
            .map(|&v| grads.wrt(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(v).len()]))
            .collect();
        (tape.scalar(loss), out_vals, g)
    };

    let (_, out0, _) = eval(&inputs, None);
    let proj: Vec<f64> = (0..out0.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, _, analytic) = eval(&inputs, Some(&proj));

    for (k, x) in inputs.iter().enumerate() {
        let numeric = central_diff(x, 1e-6, |probe| {
            let mut vals = inputs.clone();
            vals[k] = probe.to_vec();
            let (_, out, _) = eval(&vals, None);
            out.iter().zip(&proj).map(|(a, b)| a * b).sum()
        });
        for (i, (a, n)) in analytic[k].iter().zip(&numeric).enumerate() {
            if !close(*a, *n, rtol, 1e-8) {
                return Some(format!("input {k}[{i}]: analytic {a}, numeric {n}"));
            }
        }
    }
    None
}

/// D=4, H=6, C=3 (background included), l_d=3, K=3, P=3.
pub fn tiny_config(adaptive: bool) -> ModelConfig {
    ModelConfig {
        feature_dim: 4,
        hidden: 6,
        num_classes: 3,
        sampler: SamplerConfig::new(3, 3, 3).unwrap(),
        adaptive,
    }
}

/// A small benchmark that trains in seconds.
pub fn small_data(seed: u64) -> (Vec<FeatureSequence>, Vec<FeatureSequence>) {
    let cfg = SyntheticConfig {
        num_classes: 3,
        feature_dim: 8,
        num_sequences: 6,
        num_test_sequences: 3,
        length: [60, 80],
        action_length: [8, 16],
        background_length: [4, 10],
        noise: 1.0,
        seed,
        ..SyntheticConfig::default()
    };
    let ds = generate_synthetic(&cfg).unwrap();
    (ds.train, ds.test)
}

pub fn small_run(seed: u64) -> RunConfig {
    RunConfig {
        l_e: 16,
        l_d: 4,
        progression_states: 3,
        window_size: 3,
        hidden: 8,
        batch_size: 4,
        epochs: 4,
        learning_rate: 0.01,
        seed,
        ..RunConfig::default()
    }
}
