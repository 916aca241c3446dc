use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::evaluate;
use super::train::{train, Trainer};
use crate::data::FeatureSequence;
use crate::error::{Error, Result};

/// Which knob an ablation varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum Sweep {
    /// Adaptive window selection against the fixed most-future window.
    AfsOnOff,
    /// Window sizes `K`.
    Window(Vec<usize>),
    /// Progression state counts `P`.
    States(Vec<usize>),
}

impl Sweep {
    /// Parses `afs`, `k=3,5,7` or `p=2,4,6`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.eq_ignore_ascii_case("afs") {
            return Ok(Sweep::AfsOnOff);
        }
        let (key, list) = text
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("sweep `{text}` is not `afs`, `k=...` or `p=...`")))?;
        let values = list
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("sweep value `{v}` is not a positive integer")))
            })
            .collect::<Result<Vec<_>>>()?;
        match key.trim().to_ascii_lowercase().as_str() {
            "k" => Ok(Sweep::Window(values)),
            "p" => Ok(Sweep::States(values)),
            other => Err(Error::Config(format!("unknown sweep key `{other}`"))),
        }
    }

    /// Labelled run configurations, one per variant.
    pub fn variants(&self, base: &RunConfig) -> Result<Vec<(String, RunConfig)>> {
        let variants: Vec<(String, RunConfig)> = match self {
            Sweep::AfsOnOff => vec![
                (
                    "w/o AFS".into(),
                    RunConfig {
                        adaptive_sampling: false,
                        ..base.clone()
                    },
                ),
                (
                    "w/ AFS".into(),
                    RunConfig {
                        adaptive_sampling: true,
                        ..base.clone()
                    },
                ),
            ],
            Sweep::Window(ks) => ks
                .iter()
                .map(|&k| {
                    (
                        format!("K={k}"),
                        RunConfig {
                            window_size: k,
                            ..base.clone()
                        },
                    )
                })
                .collect(),
            Sweep::States(ps) => ps
                .iter()
                .map(|&p| {
                    (
                        format!("P={p}"),
                        RunConfig {
                            progression_states: p,
                            ..base.clone()
                        },
                    )
                })
                .collect(),
        };
        if variants.is_empty() {
            return Err(Error::Config("sweep has no values".into()));
        }
        for (_, cfg) in &variants {
            cfg.validate()?;
        }
        Ok(variants)
    }
}

/// One trained and evaluated variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub map: f64,
    pub mcap: f64,
    pub future_step_map: Vec<f64>,
    /// Gumbel draws taken during training.
    pub gumbel_draws: usize,
    pub seconds: f64,
}

/// Mean over seeds for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub mean_map: f64,
    pub mean_mcap: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub sweep: Sweep,
    pub rows: Vec<AblationRow>,
    pub summary: Vec<VariantSummary>,
}

/// Trains every variant for every seed on `train_data` and evaluates it on
/// `test_data`. Variants share the seed list, so variant `i` seed `s` and
/// variant `j` seed `s` start from the same stream.
pub fn ablate(
    base: &RunConfig,
    sweep: &Sweep,
    seeds: &[u64],
    train_data: &[FeatureSequence],
    test_data: &[FeatureSequence],
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let variants = sweep.variants(base)?;
    let mut rows = Vec::new();
    for (name, cfg) in &variants {
        for &seed in seeds {
            let started = Instant::now();
            let run = RunConfig { seed, ..cfg.clone() };
            let trainer = Trainer::new(run, train_data)?;
            let outcome = train(trainer, train_data, |_, _| Ok(()))?;
            let eval = evaluate(&outcome.checkpoint.model, test_data)?;
            let row = AblationRow {
                variant: name.clone(),
                seed,
                map: eval.table.map,
                mcap: eval.table.mcap,
                future_step_map: eval.future_step_map,
                gumbel_draws: outcome.logs.iter().map(|l| l.gumbel_draws).sum(),
                seconds: started.elapsed().as_secs_f64(),
            };
            tracing::info!(variant = %row.variant, seed, map = row.map, "variant finished");
            rows.push(row);
        }
    }
    let summary = variants
        .iter()
        .map(|(name, _)| {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| &r.variant == name).collect();
            let n = mine.len() as f64;
            VariantSummary {
                variant: name.clone(),
                mean_map: mine.iter().map(|r| r.map).sum::<f64>() / n,
                mean_mcap: mine.iter().map(|r| r.mcap).sum::<f64>() / n,
                seeds: mine.len(),
            }
        })
        .collect();
    Ok(AblationTable {
        sweep: sweep.clone(),
        rows,
        summary,
    })
}

impl AblationTable {
    /// Plain-text table: one line per variant with mAP/mcAP in percent,
    /// followed by the per-seed rows.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<12} {:>8} {:>8} {:>6}", "variant", "mAP(%)", "mcAP(%)", "seeds").unwrap();
        for s in &self.summary {
            writeln!(
                out,
                "{:<12} {:>8.2} {:>8.2} {:>6}",
                s.variant,
                100.0 * s.mean_map,
                100.0 * s.mean_mcap,
                s.seeds
            )
            .unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "{:<12} {:>6} {:>8} {:>8} {:>8}", "variant", "seed", "mAP(%)", "mcAP(%)", "draws").unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{:<12} {:>6} {:>8.2} {:>8.2} {:>8}",
                r.variant,
                r.seed,
                100.0 * r.map,
                100.0 * r.mcap,
                r.gumbel_draws
            )
            .unwrap();
        }
        out
    }
}
