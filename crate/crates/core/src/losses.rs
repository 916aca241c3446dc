//! Training objectives: current-frame detection loss, future-step
//! prediction loss, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::error::{ensure_dim, Error, Result};

/// `−ln c_t[y_t]`.
pub fn loss_cls(tape: &mut Tape<'_>, probs: Var, label: usize) -> Result<Var> {
    tape.cross_entropy(probs, label)
}

/// Mean cross-entropy of each predicted step against its future label.
pub fn loss_pre(tape: &mut Tape<'_>, class_probs: &[Var], labels: &[usize]) -> Result<Var> {
    ensure_dim!(
        class_probs.len() == labels.len() && !labels.is_empty(),
        "{} predicted steps but {} future labels",
        class_probs.len(),
        labels.len()
    );
    let terms = class_probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| tape.cross_entropy(p, y))
        .collect::<Result<Vec<_>>>()?;
    mean_of(tape, &terms)
}

/// `cls + λ·pre`.
pub fn total_loss(tape: &mut Tape<'_>, cls: Var, pre: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("loss weight must be non-negative, got {lambda}")));
    }
    let weighted = tape.scale(pre, lambda);
    tape.add(cls, weighted)
}

/// Mean of scalar nodes (frames in a sample, samples in a batch).
pub fn mean_of(tape: &mut Tape<'_>, scalars: &[Var]) -> Result<Var> {
    tape.mean_rows(scalars)
}

/// Loss components of one evaluation of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub cls: f64,
    pub pre: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(cls: f64, pre: f64, lambda: f64) -> Self {
        LossReport {
            cls,
            pre,
            lambda,
            total: cls + lambda * pre,
        }
    }
}
