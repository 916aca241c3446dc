use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{FrameOutput, LapNet};
use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::metrics::EvaluationTable;

/// Model output for one frame of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub sequence: String,
    pub frame: usize,
    pub label: usize,
    pub output: FrameOutput,
}

/// Metrics over a set of sequences plus the per-frame outputs behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub table: EvaluationTable,
    /// mAP of the decoder's class prediction `i` steps ahead, per step.
    pub future_step_map: Vec<f64>,
    pub records: Vec<FrameRecord>,
}

/// Runs `model` over one sequence in stream order. Labels are not read.
pub fn run_sequence(model: &LapNet, seq: &FeatureSequence) -> Result<Vec<FrameOutput>> {
    let mut state = model.new_stream();
    (0..seq.len()).map(|t| model.eval_step(&mut state, &seq.frame(t))).collect()
}

/// Evaluates each sequence independently, in parallel, and scores the result.
pub fn evaluate(model: &LapNet, sequences: &[FeatureSequence]) -> Result<Evaluation> {
    let cfg = model.config();
    for seq in sequences {
        if seq.dim != cfg.feature_dim || seq.output_classes() != cfg.num_classes {
            return Err(Error::Dimension(format!(
                "sequence `{}` has D={} and {} classes; checkpoint expects D={} and {} classes",
                seq.name,
                seq.dim,
                seq.output_classes(),
                cfg.feature_dim,
                cfg.num_classes
            )));
        }
    }
    let outputs: Vec<Vec<FrameOutput>> = sequences
        .par_iter()
        .map(|seq| run_sequence(model, seq))
        .collect::<Result<_>>()?;

    let steps = cfg.history();
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    // Per future step: scores and the labels they are judged against.
    let mut future: Vec<(Vec<Vec<f64>>, Vec<Option<usize>>)> = vec![Default::default(); steps];
    let mut records = Vec::new();
    for (seq, outs) in sequences.iter().zip(outputs) {
        for (t, out) in outs.into_iter().enumerate() {
            probs.push(out.probs.clone());
            labels.push(Some(seq.label(t)));
            for (i, (p, l)) in future.iter_mut().enumerate() {
                if t + i < seq.len() {
                    p.push(out.future_probs[i].clone());
                    l.push(Some(seq.label(t + i)));
                }
            }
            records.push(FrameRecord {
                sequence: seq.name.clone(),
                frame: t,
                label: seq.label(t),
                output: out,
            });
        }
    }
    let table = EvaluationTable::compute(&probs, &labels, cfg.num_classes);
    let future_step_map = future
        .iter()
        .map(|(p, l)| EvaluationTable::compute(p, l, cfg.num_classes).map)
        .collect();
    Ok(Evaluation {
        table,
        future_step_map,
        records,
    })
}

/// Header plus one row per frame: sequence, frame, label, class
/// probabilities, then the chosen progression state.
pub fn frame_csv(records: &[FrameRecord], num_classes: usize) -> String {
    let mut out = String::from("sequence,frame,label");
    for c in 0..num_classes {
        write!(out, ",p_{c}").unwrap();
    }
    out.push_str(",state\n");
    for r in records {
        write!(out, "{},{},{}", r.sequence, r.frame, r.label).unwrap();
        for p in &r.output.probs {
            write!(out, ",{p}").unwrap();
        }
        writeln!(out, ",{}", r.output.state).unwrap();
    }
    out
}
