use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use crate::cells::{lapnet_step, LapNet, StepMode};
use crate::data::{chunk_training_samples, draw_offset, future_labels, FeatureSequence};
use crate::diffcore::{clip_global_norm, GradBuffer, OptimizerState, ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::losses::{loss_cls, loss_pre, mean_of, total_loss};
use crate::memory::HistoryStack;

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// Zero-based epoch index.
    pub epoch: u64,
    pub loss_cls: f64,
    pub loss_pre: f64,
    pub total: f64,
    pub tau: f64,
    pub wall_time_s: f64,
    pub samples: usize,
    pub gumbel_draws: usize,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,loss_cls,loss_pre,total,tau,wall_time_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.epoch, self.loss_cls, self.loss_pre, self.total, self.tau, self.wall_time_s
        )
    }

    /// Row fields that must be reproducible; everything except wall time.
    pub fn deterministic_fields(&self) -> (u64, u64, u64, u64, u64, usize, usize) {
        (
            self.epoch,
            self.loss_cls.to_bits(),
            self.loss_pre.to_bits(),
            self.total.to_bits(),
            self.tau.to_bits(),
            self.samples,
            self.gumbel_draws,
        )
    }
}

/// Loss statistics of one training sample.
#[derive(Debug, Clone, Copy, Default)]
struct SampleStats {
    cls: f64,
    pre: f64,
    total: f64,
    gumbel_draws: usize,
}

/// Training state: model, optimizer and the number of completed epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    run: RunConfig,
    model: LapNet,
    optimizer: OptimizerState,
    epoch: u64,
}

fn stream_id(epoch: u64, sample: Option<usize>) -> u64 {
    ((epoch + 1) << 32) | sample.map_or(0, |s| s as u64 + 1)
}

impl Trainer {
    /// Fresh model sized for `data`.
    pub fn new(run: RunConfig, data: &[FeatureSequence]) -> Result<Self> {
        run.validate()?;
        let first = data
            .first()
            .ok_or_else(|| Error::Config("training data is empty".into()))?;
        let model_cfg = run.model(first.dim, first.num_classes as usize)?;
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
        let model = LapNet::new(model_cfg, &mut rng)?;
        let optimizer = OptimizerState::new(run.adam(), model.params());
        let trainer = Trainer {
            run,
            model,
            optimizer,
            epoch: 0,
        };
        trainer.check_data(data)?;
        Ok(trainer)
    }

    /// Continues from `checkpoint` under `run`, which may extend the epoch
    /// count but must keep the model layout.
    pub fn resume(run: RunConfig, checkpoint: Checkpoint, data: &[FeatureSequence]) -> Result<Self> {
        run.validate()?;
        let first = data
            .first()
            .ok_or_else(|| Error::Config("training data is empty".into()))?;
        let expected = run.model(first.dim, first.num_classes as usize)?;
        if expected != *checkpoint.model.config() {
            return Err(Error::Dimension(format!(
                "checkpoint model {:?} does not match run/data layout {expected:?}",
                checkpoint.model.config()
            )));
        }
        let mut optimizer = checkpoint.optimizer;
        optimizer.config = run.adam();
        let trainer = Trainer {
            run,
            model: checkpoint.model,
            optimizer,
            epoch: checkpoint.epoch,
        };
        trainer.check_data(data)?;
        Ok(trainer)
    }

    fn check_data(&self, data: &[FeatureSequence]) -> Result<()> {
        let cfg = self.model.config();
        for seq in data {
            if seq.dim != cfg.feature_dim || seq.output_classes() != cfg.num_classes {
                return Err(Error::Dimension(format!(
                    "sequence `{}` has D={}, {} classes; model expects D={}, {} classes",
                    seq.name,
                    seq.dim,
                    seq.output_classes(),
                    cfg.feature_dim,
                    cfg.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> &LapNet {
        &self.model
    }

    pub fn run(&self) -> &RunConfig {
        &self.run
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.run.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            run: self.run.clone(),
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            epoch: self.epoch,
        }
    }

    fn frozen(&self) -> Vec<ParamId> {
        if self.run.freeze_decoder {
            self.model.ids().decoder_ids()
        } else {
            Vec::new()
        }
    }

    /// Runs one epoch: redraw offsets, chunk, shuffle, and take one
    /// optimizer step per batch.
    pub fn train_epoch(&mut self, data: &[FeatureSequence]) -> Result<EpochLog> {
        let started = Instant::now();
        let epoch = self.epoch;
        let tau = self.run.schedule()?.at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(self.run.seed);
        rng.set_stream(stream_id(epoch, None));

        let mut samples: Vec<(usize, Range<usize>)> = Vec::new();
        for (i, seq) in data.iter().enumerate() {
            let offset = draw_offset(self.run.l_e, &mut rng);
            for range in chunk_training_samples(seq.len(), self.run.l_e, offset)? {
                samples.push((i, range));
            }
        }
        if samples.is_empty() {
            return Err(Error::Config(format!(
                "no sequence is long enough for a {}-frame training sample",
                self.run.l_e
            )));
        }
        samples.shuffle(&mut rng);

        let frozen = self.frozen();
        let mut totals = SampleStats::default();
        for (batch_idx, batch) in samples.chunks(self.run.batch_size).enumerate() {
            let base = batch_idx * self.run.batch_size;
            let results: Vec<Result<(GradBuffer, SampleStats)>> = batch
                .par_iter()
                .enumerate()
                .map(|(j, (seq, range))| {
                    let mut sample_rng = ChaCha8Rng::seed_from_u64(self.run.seed);
                    sample_rng.set_stream(stream_id(epoch, Some(base + j)));
                    sample_gradients(&self.model, &self.run, &data[*seq], range.clone(), tau, &mut sample_rng)
                })
                .collect();

            let mut grads = GradBuffer::zeros_like(self.model.params());
            for result in results {
                let (g, stats) = result?;
                grads.add_scaled(&g, 1.0 / batch.len() as f64);
                totals.cls += stats.cls;
                totals.pre += stats.pre;
                totals.total += stats.total;
                totals.gumbel_draws += stats.gumbel_draws;
            }
            if !totals.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became non-finite at epoch {epoch}, batch {batch_idx} (cls {}, pre {})",
                    totals.cls, totals.pre
                )));
            }
            clip_global_norm(&mut grads, self.run.grad_clip);
            for &id in &frozen {
                grads.get_mut(id).fill(0.0);
            }
            self.optimizer.update_except(self.model.params_mut(), &grads, &frozen)?;
        }

        self.epoch += 1;
        let n = samples.len() as f64;
        let log = EpochLog {
            epoch,
            loss_cls: totals.cls / n,
            loss_pre: totals.pre / n,
            total: totals.total / n,
            tau,
            wall_time_s: started.elapsed().as_secs_f64(),
            samples: samples.len(),
            gumbel_draws: totals.gumbel_draws,
        };
        tracing::info!(
            epoch,
            total = log.total,
            cls = log.loss_cls,
            pre = log.loss_pre,
            tau,
            "epoch finished"
        );
        Ok(log)
    }
}

/// Forward and backward over one `l_e`-frame sample with fresh recurrent
/// state. Returns parameter gradients of the mean per-frame objective.
fn sample_gradients(
    model: &LapNet,
    run: &RunConfig,
    seq: &FeatureSequence,
    range: Range<usize>,
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(GradBuffer, SampleStats)> {
    let cfg = model.config();
    let mut tape = Tape::with_params(model.params());
    let bound = model.bind(&mut tape);
    let mut h = tape.constant_vec(model.initial_hidden());
    let mut history = HistoryStack::new(cfg.history(), cfg.feature_dim);
    let (mut cls_terms, mut pre_terms, mut frame_totals) = (Vec::new(), Vec::new(), Vec::new());
    let mut draws = 0;

    for t in range.clone() {
        let frame = seq.frame(t);
        let out = lapnet_step(
            &mut tape,
            &bound,
            cfg,
            h,
            &mut history,
            &frame,
            StepMode::Train { tau, rng: &mut *rng },
        )?;
        draws += out.gumbel_draws;
        let cls = loss_cls(&mut tape, out.probs, seq.label(t))?;
        let targets = future_labels(&seq.labels, t, cfg.history());
        let pre = loss_pre(&mut tape, &out.future.class_probs, &targets)?;
        let mut total = total_loss(&mut tape, cls, pre, run.lambda)?;
        if run.feature_regression > 0.0 {
            let reg = feature_regression(&mut tape, seq, t, &out.future.features)?;
            if let Some(reg) = reg {
                let weighted = tape.scale(reg, run.feature_regression);
                total = tape.add(total, weighted)?;
            }
        }
        cls_terms.push(cls);
        pre_terms.push(pre);
        frame_totals.push(total);
        h = out.hidden;
    }

    let loss = mean_of(&mut tape, &frame_totals)?;
    let stats = SampleStats {
        cls: mean_value(&tape, &cls_terms),
        pre: mean_value(&tape, &pre_terms),
        total: tape.scalar(loss),
        gumbel_draws: draws,
    };
    let mut grads = GradBuffer::zeros_like(model.params());
    tape.backward(loss)?.accumulate_into(&mut grads);
    Ok((grads, stats))
}

fn mean_value(tape: &Tape<'_>, vars: &[Var]) -> f64 {
    vars.iter().map(|&v| tape.scalar(v)).sum::<f64>() / vars.len() as f64
}

/// Mean squared error of predicted features against the observed frames
/// they stand for, over steps still inside the sequence.
fn feature_regression(tape: &mut Tape<'_>, seq: &FeatureSequence, t: usize, predicted: &[Var]) -> Result<Option<Var>> {
    let mut terms = Vec::new();
    for (i, &pred) in predicted.iter().enumerate() {
        if t + i >= seq.len() {
            break;
        }
        let target = tape.constant_vec(seq.frame(t + i));
        let diff = tape.sub(pred, target)?;
        let sq = tape.mul(diff, diff)?;
        terms.push(tape.mean(sq));
    }
    if terms.is_empty() {
        return Ok(None);
    }
    mean_of(tape, &terms).map(Some)
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
}

/// Trains until `run.epochs` epochs have completed, calling `on_epoch`
/// after each one.
pub fn train<F>(mut trainer: Trainer, data: &[FeatureSequence], mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochLog, &Trainer) -> Result<()>,
{
    let mut logs = Vec::new();
    while !trainer.is_done() {
        let log = trainer.train_epoch(data)?;
        on_epoch(&log, &trainer)?;
        logs.push(log);
    }
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        logs,
    })
}
