//! Feature-sequence storage, the synthetic benchmark, and training-sample
//! chunking.

mod chunk;
mod manifest;
mod sequence;
mod synthetic;

pub use chunk::{chunk_training_samples, draw_offset, future_labels};
pub use manifest::{load_split, Manifest};
pub use sequence::{load_sequence, save_sequence, FeatureSequence, LapfFrameReader, LAPF_MAGIC, LAPF_VERSION};
pub use synthetic::{generate_synthetic, Prototypes, SyntheticConfig, SyntheticDataset};
