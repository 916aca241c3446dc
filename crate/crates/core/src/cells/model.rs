use std::ops::Range;

use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::gru::{gru_step, BoundGru, GruParameters};
use crate::diffcore::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{ensure_dim, Error, Result};
use crate::gumbel::{draw_progression, one_hot, Draw, ProgressionDistribution};
use crate::memory::{build_pool, HistoryStack};
use crate::sampler::{adaptive_supplementary, SamplerConfig};

/// Shape of a detection model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    /// Classifier outputs, background (index 0) included.
    pub num_classes: usize,
    pub sampler: SamplerConfig,
    /// When false the supplementary window is pinned to the most
    /// future-biased window and the progression head is never used.
    pub adaptive: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("feature_dim and hidden must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need background plus at least one action class, got {} outputs",
                self.num_classes
            )));
        }
        SamplerConfig::new(self.sampler.history, self.sampler.window, self.sampler.states)?;
        Ok(())
    }

    pub fn history(&self) -> usize {
        self.sampler.history
    }
}

/// A fully connected layer `[out, in]` plus bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearParameters {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearParameters {
    fn register<R: Rng + ?Sized>(params: &mut ParamSet, prefix: &str, out: usize, input: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        LinearParameters {
            weight: params.insert(format!("{prefix}.weight"), Tensor::uniform(&[out, input], bound, rng)),
            bias: params.insert(format!("{prefix}.bias"), Tensor::zeros(&[out])),
        }
    }

    fn bind(&self, tape: &mut Tape<'_>) -> BoundLinear {
        BoundLinear {
            weight: tape.param(self.weight),
            bias: tape.param(self.bias),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        tape.linear(x, self.weight, self.bias)
    }
}

/// Parameter handles of the whole model. The classifier is one parameter
/// pair used for both the detection output and every predicted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LapNetParameters {
    pub detection: GruParameters,
    pub decoder: GruParameters,
    pub progression: LinearParameters,
    pub feature_head: LinearParameters,
    pub classifier: LinearParameters,
}

impl LapNetParameters {
    /// Parameters of the future-prediction branch.
    pub fn decoder_ids(&self) -> Vec<ParamId> {
        let mut ids = self.decoder.ids().to_vec();
        ids.extend([self.feature_head.weight, self.feature_head.bias]);
        ids
    }
}

/// All model parameters bound on one tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundLapNet {
    pub detection: BoundGru,
    pub decoder: BoundGru,
    pub progression: BoundLinear,
    pub feature_head: BoundLinear,
    pub classifier: BoundLinear,
}

/// Model parameters and their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LapNet {
    config: ModelConfig,
    params: ParamSet,
    ids: LapNetParameters,
}

impl LapNet {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let ModelConfig {
            feature_dim: d,
            hidden: h,
            num_classes: c,
            ..
        } = config;
        let mut params = ParamSet::new();
        let ids = LapNetParameters {
            detection: GruParameters::register(&mut params, "detection", h, 2 * d, rng),
            decoder: GruParameters::register(&mut params, "decoder", h, d, rng),
            progression: LinearParameters::register(&mut params, "progression", config.sampler.states, h, rng),
            feature_head: LinearParameters::register(&mut params, "feature_head", d, h, rng),
            classifier: LinearParameters::register(&mut params, "classifier", c, h, rng),
        };
        Ok(LapNet { config, params, ids })
    }

    /// Rebuilds a model from stored tensors, which must match the layout
    /// `config` implies by name and shape.
    pub fn from_params(config: ModelConfig, stored: ParamSet) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = LapNet::new(config, &mut rng)?;
        if stored.len() != model.params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                stored.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let src = stored
                .find(&name)
                .ok_or_else(|| Error::Dimension(format!("missing parameter `{name}`")))?;
            let value = stored.get(src);
            ensure_dim!(
                value.shape() == model.params.get(id).shape(),
                "parameter `{name}` has shape {:?}, model expects {:?}",
                value.shape(),
                model.params.get(id).shape()
            );
            *model.params.get_mut(id) = value.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn ids(&self) -> &LapNetParameters {
        &self.ids
    }

    pub fn bind(&self, tape: &mut Tape<'_>) -> BoundLapNet {
        BoundLapNet {
            detection: self.ids.detection.bind(tape),
            decoder: self.ids.decoder.bind(tape),
            progression: self.ids.progression.bind(tape),
            feature_head: self.ids.feature_head.bind(tape),
            classifier: self.ids.classifier.bind(tape),
        }
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.config.hidden]
    }

    pub fn new_stream(&self) -> StreamState {
        StreamState {
            hidden: self.initial_hidden(),
            history: HistoryStack::new(self.config.history(), self.config.feature_dim),
        }
    }

    /// Noise-free step on a stream, on a throwaway tape.
    pub fn eval_step(&self, state: &mut StreamState, frame: &[f64]) -> Result<FrameOutput> {
        let mut tape = Tape::with_params(&self.params);
        let bound = self.bind(&mut tape);
        let h_prev = tape.constant_vec(state.hidden.clone());
        let out = lapnet_step(&mut tape, &bound, &self.config, h_prev, &mut state.history, frame, StepMode::Eval)?;
        state.hidden = tape.value(out.hidden).to_vec();
        if !state.hidden.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("hidden state became non-finite".into()));
        }
        Ok(FrameOutput::from_step(&tape, &out))
    }
}

/// Log-probabilities over progression states from the previous hidden state.
pub fn estimate_progression(tape: &mut Tape<'_>, h_prev: Var, head: &BoundLinear) -> Result<Var> {
    let logits = head.apply(tape, h_prev)?;
    tape.log_softmax(logits)
}

/// Output of the autoregressive future decoder.
#[derive(Debug, Clone)]
pub struct FuturePrediction {
    pub features: Vec<Var>,
    pub class_probs: Vec<Var>,
    pub hiddens: Vec<Var>,
}

/// Runs the decoder `steps` times starting from `h_prev` with `f_curr` as
/// the first input, feeding each predicted feature back in.
pub fn predict_future(
    tape: &mut Tape<'_>,
    bound: &BoundLapNet,
    h_prev: Var,
    f_curr: Var,
    steps: usize,
) -> Result<FuturePrediction> {
    let mut out = FuturePrediction {
        features: Vec::with_capacity(steps),
        class_probs: Vec::with_capacity(steps),
        hiddens: Vec::with_capacity(steps),
    };
    let (mut hidden, mut input) = (h_prev, f_curr);
    for _ in 0..steps {
        hidden = gru_step(tape, &bound.decoder, hidden, input)?;
        let feature = bound.feature_head.apply(tape, hidden)?;
        let logits = bound.classifier.apply(tape, hidden)?;
        let probs = tape.softmax(logits)?;
        out.hiddens.push(hidden);
        out.features.push(feature);
        out.class_probs.push(probs);
        input = feature;
    }
    Ok(out)
}

/// How the progression state is chosen for a step.
pub enum StepMode<'a> {
    /// Gumbel-Max sampling with straight-through gradients at temperature `tau`.
    Train { tau: f64, rng: &'a mut dyn RngCore },
    /// Noise-free argmax of the estimated distribution.
    Eval,
    /// Externally chosen state; no estimation or noise.
    Forced(usize),
}

/// Everything one detection step produces.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub hidden: Var,
    pub scores: Var,
    pub probs: Var,
    pub future: FuturePrediction,
    pub supplementary: Var,
    pub progression: Option<ProgressionDistribution>,
    pub state: usize,
    pub window: Range<usize>,
    /// Number of Gumbel draws taken (0 or 1).
    pub gumbel_draws: usize,
}

/// One full detection step on frame `f_t`:
/// future prediction from `h_{t−1}` and `f_t`, pool assembly, progression
/// estimate and draw, supplementary aggregation, detection GRU on
/// `[f_t; f_s]`, shared classifier, then the history push of `f_t`.
pub fn lapnet_step(
    tape: &mut Tape<'_>,
    bound: &BoundLapNet,
    config: &ModelConfig,
    h_prev: Var,
    history: &mut HistoryStack,
    frame: &[f64],
    mode: StepMode<'_>,
) -> Result<StepOutput> {
    ensure_dim!(
        frame.len() == config.feature_dim,
        "frame has {} features, model expects {}",
        frame.len(),
        config.feature_dim
    );
    ensure_dim!(
        history.capacity() == config.history() && history.dim() == config.feature_dim,
        "stream history does not match the model"
    );
    let sampler = config.sampler;
    let f_t = tape.constant_vec(frame.to_vec());

    let future = predict_future(tape, bound, h_prev, f_t, sampler.history)?;
    let pool = build_pool(tape, history, &future.features)?;

    let mut gumbel_draws = 0;
    let (dist, relaxed, estimated) = if !config.adaptive {
        (fixed(sampler.most_future_state(), sampler.states), None, false)
    } else {
        match mode {
            StepMode::Forced(state) => {
                sampler.window(state)?;
                (fixed(state, sampler.states), None, false)
            }
            StepMode::Eval => {
                let lp = estimate_progression(tape, h_prev, &bound.progression)?;
                let (dist, _) = draw_progression::<dyn RngCore>(tape, lp, Draw::Greedy)?;
                (dist, None, true)
            }
            StepMode::Train { tau, rng } => {
                let lp = estimate_progression(tape, h_prev, &bound.progression)?;
                gumbel_draws = 1;
                let (dist, relaxed) = draw_progression(tape, lp, Draw::Noisy { tau, rng })?;
                (dist, relaxed, true)
            }
        }
    };
    let supp = adaptive_supplementary(tape, &pool, &dist, relaxed, &sampler)?;

    let supp_state = dist.hard_sample;
    let x = tape.concat(&[f_t, supp.feature])?;
    let hidden = gru_step(tape, &bound.detection, h_prev, x)?;
    let scores = bound.classifier.apply(tape, hidden)?;
    let probs = tape.softmax(scores)?;
    history.push(frame)?;

    Ok(StepOutput {
        hidden,
        scores,
        probs,
        future,
        supplementary: supp.feature,
        state: supp_state,
        progression: estimated.then_some(dist),
        window: supp.window,
        gumbel_draws,
    })
}

fn fixed(state: usize, states: usize) -> ProgressionDistribution {
    ProgressionDistribution {
        soft_estimate: one_hot(state, states),
        relaxed: one_hot(state, states),
        hard_sample: state,
        one_hot: one_hot(state, states),
        temperature: 0.0,
    }
}

/// Per-stream recurrent state for online inference.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    pub hidden: Vec<f64>,
    pub history: HistoryStack,
}

/// Plain-value result of one streamed frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutput {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub future_probs: Vec<Vec<f64>>,
    pub state: usize,
    pub window: Range<usize>,
}

impl FrameOutput {
    pub fn from_step(tape: &Tape<'_>, out: &StepOutput) -> Self {
        FrameOutput {
            scores: tape.value(out.scores).to_vec(),
            probs: tape.value(out.probs).to_vec(),
            future_probs: out.future.class_probs.iter().map(|&p| tape.value(p).to_vec()).collect(),
            state: out.state,
            window: out.window.clone(),
        }
    }
}
