//! File-level entry points: each reads its inputs from disk, runs, and
//! writes its reports next to the other run artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ablate::{ablate, AblationTable, Sweep};
use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::eval::{evaluate, frame_csv};
use super::train::{train, EpochLog, Trainer};
use crate::data::{generate_synthetic, load_split, save_sequence, FeatureSequence, Manifest, SyntheticConfig};
use crate::error::{Error, Result};
use crate::metrics::EvaluationTable;

pub const FINAL_CHECKPOINT: &str = "checkpoint.lapc";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const METRICS: &str = "metrics.json";
pub const FRAMES: &str = "frames.csv";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn manifest_of(run: &RunConfig) -> Result<&Path> {
    run.manifest
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset manifest configured".into()))
}

/// Checkpoint file name for an intermediate epoch.
pub fn epoch_checkpoint(epoch: u64) -> String {
    format!("checkpoint_epoch{epoch:03}.lapc")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub epochs: Vec<EpochLog>,
}

/// Trains on the manifest's `train` split. With `resume`, continues from
/// that checkpoint; the log then holds only the epochs run here.
pub fn cmd_train(run: RunConfig, resume: Option<&Path>) -> Result<TrainReport> {
    run.validate()?;
    let data = load_split(manifest_of(&run)?, "train")?;
    let trainer = match resume {
        Some(path) => Trainer::resume(run.clone(), Checkpoint::load(path)?, &data)?,
        None => Trainer::new(run.clone(), &data)?,
    };
    let out_dir = run.out_dir.clone();
    create_dir(&out_dir)?;
    write(&out_dir.join("config.json"), serde_json::to_vec_pretty(&run)?)?;

    let log_path = out_dir.join(TRAIN_LOG);
    let mut log = format!("{}\n", EpochLog::CSV_HEADER);
    write(&log_path, &log)?;
    let every = run.checkpoint_every;
    let result = train(trainer, &data, |entry, trainer| {
        log.push_str(&entry.csv_row());
        log.push('\n');
        write(&log_path, &log)?;
        if every > 0 && trainer.epoch() % every == 0 && !trainer.is_done() {
            trainer.checkpoint().save(&out_dir.join(epoch_checkpoint(trainer.epoch())))?;
        }
        Ok(())
    });
    let outcome = match result {
        Ok(outcome) => outcome,
        Err(err @ Error::Numeric(_)) => {
            let dump = serde_json::json!({ "error": err.to_string(), "log": log });
            write(&out_dir.join("diagnostic.json"), serde_json::to_vec_pretty(&dump)?)?;
            return Err(err);
        }
        Err(err) => return Err(err),
    };
    let checkpoint = out_dir.join(FINAL_CHECKPOINT);
    outcome.checkpoint.save(&checkpoint)?;
    Ok(TrainReport {
        out_dir,
        checkpoint,
        log: log_path,
        epochs: outcome.logs,
    })
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub split: String,
    pub sequences: usize,
    pub table: EvaluationTable,
    pub future_step_map: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: EvalMetrics,
    pub metrics_path: PathBuf,
    pub frames_path: PathBuf,
}

/// Evaluates `checkpoint` on `split` of `manifest` (the checkpoint's own
/// manifest when `None`) and writes `metrics.json` and `frames.csv` to
/// `out_dir` (default: `eval/` beside the checkpoint).
pub fn cmd_eval(checkpoint: &Path, manifest: Option<&Path>, split: &str, out_dir: Option<&Path>) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let manifest = match manifest {
        Some(m) => m.to_path_buf(),
        None => manifest_of(&ckpt.run)?.to_path_buf(),
    };
    let data = load_split(&manifest, split)?;
    let eval = evaluate(&ckpt.model, &data)?;
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join("eval"));
    create_dir(&out_dir)?;
    let metrics = EvalMetrics {
        split: split.to_string(),
        sequences: data.len(),
        table: eval.table,
        future_step_map: eval.future_step_map,
    };
    let metrics_path = out_dir.join(METRICS);
    let frames_path = out_dir.join(FRAMES);
    write(&metrics_path, serde_json::to_vec_pretty(&metrics)?)?;
    write(&frames_path, frame_csv(&eval.records, ckpt.model.config().num_classes))?;
    Ok(EvalReport {
        metrics,
        metrics_path,
        frames_path,
    })
}

/// Runs a sweep with the manifest's `train` and `test` splits and writes
/// `ablation.json` and `ablation.txt` to the run's output directory.
pub fn cmd_ablate(run: RunConfig, sweep: &Sweep, seeds: &[u64]) -> Result<AblationTable> {
    run.validate()?;
    let manifest = manifest_of(&run)?;
    let train_data = load_split(manifest, "train")?;
    let test_data = load_split(manifest, "test")?;
    let table = ablate(&run, sweep, seeds, &train_data, &test_data)?;
    create_dir(&run.out_dir)?;
    write(&run.out_dir.join("ablation.json"), serde_json::to_vec_pretty(&table)?)?;
    write(&run.out_dir.join("ablation.txt"), table.render())?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenReport {
    pub manifest: PathBuf,
    pub train: usize,
    pub test: usize,
}

/// Writes a synthetic benchmark as LAPF files plus `manifest.json`.
pub fn cmd_gen_data(cfg: &SyntheticConfig, out_dir: &Path) -> Result<GenReport> {
    let dataset = generate_synthetic(cfg)?;
    let mut manifest = Manifest::default();
    for (split, seqs) in [("train", &dataset.train), ("test", &dataset.test)] {
        let dir = out_dir.join(split);
        create_dir(&dir)?;
        let files = write_split(&dir, seqs)?;
        manifest
            .splits
            .insert(split.to_string(), files.into_iter().map(|f| Path::new(split).join(f)).collect());
    }
    let path = out_dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(GenReport {
        manifest: path,
        train: dataset.train.len(),
        test: dataset.test.len(),
    })
}

fn write_split(dir: &Path, seqs: &[FeatureSequence]) -> Result<Vec<String>> {
    seqs.iter()
        .map(|seq| {
            let file = format!("{}.lapf", seq.name);
            save_sequence(seq, &dir.join(&file))?;
            Ok(file)
        })
        .collect()
}
