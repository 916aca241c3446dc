//! Per-frame average precision and its calibrated variant.

use serde::{Deserialize, Serialize};

/// Frame order after sorting by descending score; equal scores keep their
/// original order.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Average of precision-at-rank over the positive frames.
/// `None` when there are no positives.
pub fn per_frame_ap(scores: &[f64], positives: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positives.len(), "scores and labels must align");
    let n_pos = positives.iter().filter(|p| **p).count();
    if n_pos == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut total = 0.0;
    for (rank, idx) in ranking(scores).into_iter().enumerate() {
        if positives[idx] {
            tp += 1;
            total += tp as f64 / (rank + 1) as f64;
        }
    }
    Some(total / n_pos as f64)
}

/// Average precision with calibrated precision `TP / (TP + FP/w)`,
/// `w = negatives / positives`. `None` unless both classes are present.
pub fn calibrated_ap(scores: &[f64], positives: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positives.len(), "scores and labels must align");
    let n_pos = positives.iter().filter(|p| **p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let w = n_neg as f64 / n_pos as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut total = 0.0;
    for idx in ranking(scores) {
        if positives[idx] {
            tp += 1;
            total += tp as f64 / (tp as f64 + fp as f64 / w);
        } else {
            fp += 1;
        }
    }
    Some(total / n_pos as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub ap: Option<f64>,
    pub cap: Option<f64>,
}

/// Per-class AP/cAP and their means over the action classes (index 0,
/// background, excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationTable {
    pub per_class: Vec<ClassMetrics>,
    pub map: f64,
    pub mcap: f64,
    /// Action classes without positives (AP undefined).
    pub skipped_classes: Vec<usize>,
    pub frames: usize,
    pub unlabeled_frames: usize,
}

impl EvaluationTable {
    /// `probs[t]` holds per-class scores for frame `t`; frames whose label
    /// is `None` are left out.
    pub fn compute(probs: &[Vec<f64>], labels: &[Option<usize>], num_classes: usize) -> Self {
        assert_eq!(probs.len(), labels.len(), "one label slot per frame");
        let kept: Vec<usize> = (0..labels.len()).filter(|&t| labels[t].is_some()).collect();
        let mut per_class = Vec::with_capacity(num_classes);
        let mut skipped_classes = Vec::new();
        for class in 0..num_classes {
            let scores: Vec<f64> = kept.iter().map(|&t| probs[t][class]).collect();
            let positives: Vec<bool> = kept.iter().map(|&t| labels[t] == Some(class)).collect();
            let ap = per_frame_ap(&scores, &positives);
            let cap = calibrated_ap(&scores, &positives);
            if class > 0 && ap.is_none() {
                skipped_classes.push(class);
            }
            per_class.push(ClassMetrics { class, ap, cap });
        }
        let mean = |pick: fn(&ClassMetrics) -> Option<f64>| {
            let vals: Vec<f64> = per_class.iter().skip(1).filter_map(pick).collect();
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        let map = mean(|c| c.ap);
        let mcap = mean(|c| c.cap);
        EvaluationTable {
            per_class,
            map,
            mcap,
            skipped_classes,
            frames: kept.len(),
            unlabeled_frames: labels.len() - kept.len(),
        }
    }
}
