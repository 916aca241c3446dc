use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};

/// Number of frames chopped off the front, uniform in `[1, sample_len]`.
pub fn draw_offset<R: Rng + ?Sized>(sample_len: usize, rng: &mut R) -> usize {
    rng.random_range(1..=sample_len)
}

/// Drops the first `offset` frames and tiles the rest with consecutive,
/// non-overlapping windows of exactly `sample_len` frames, giving
/// `⌊(len − offset)/sample_len⌋` samples.
pub fn chunk_training_samples(len: usize, sample_len: usize, offset: usize) -> Result<Vec<Range<usize>>> {
    if sample_len == 0 {
        return Err(Error::Config("training sample length must be positive".into()));
    }
    if offset == 0 || offset > sample_len {
        return Err(Error::Config(format!(
            "offset {offset} must lie in 1..={sample_len}"
        )));
    }
    if len < offset + sample_len {
        tracing::debug!(len, sample_len, offset, "sequence too short for a training sample");
        return Ok(Vec::new());
    }
    let count = (len - offset) / sample_len;
    Ok((0..count)
        .map(|i| {
            let start = offset + i * sample_len;
            start..start + sample_len
        })
        .collect())
}

/// Labels at `t..t+steps`, repeating the final label past the end.
pub fn future_labels(labels: &[u16], t: usize, steps: usize) -> Vec<usize> {
    let last = labels.len() - 1;
    (t..t + steps).map(|i| usize::from(labels[i.min(last)])).collect()
}
