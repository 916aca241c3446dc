//! Training, evaluation, streaming and ablation drivers with their
//! configuration, checkpoint and report formats.

mod ablate;
pub mod api;
mod checkpoint;
mod commands;
mod config;
mod eval;
mod stream;
mod train;

pub use ablate::{ablate, AblationRow, AblationTable, Sweep, VariantSummary};
pub use checkpoint::{Checkpoint, LAPC_MAGIC, LAPC_VERSION};
pub use commands::{
    cmd_ablate, cmd_eval, cmd_gen_data, cmd_train, epoch_checkpoint, EvalMetrics, EvalReport, GenReport, TrainReport,
    FINAL_CHECKPOINT, FRAMES, METRICS, TRAIN_LOG,
};
pub use config::RunConfig;
pub use eval::{evaluate, frame_csv, run_sequence, Evaluation, FrameRecord};
pub use stream::{
    drive_stream, open_frame_source, stream_csv_header, stream_csv_row, FrameSource, StreamSession, TextFrameReader,
};
pub use train::{train, EpochLog, TrainOutcome, Trainer};
