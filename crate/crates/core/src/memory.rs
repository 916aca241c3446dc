//! History queue of observed features and the history/prediction feature pool.

use std::collections::VecDeque;

use crate::diffcore::{Tape, Var};
use crate::error::{ensure_dim, Result};

/// Fixed-capacity queue of the most recent observed feature vectors,
/// oldest first. Starts as `capacity` zero vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryStack {
    dim: usize,
    entries: VecDeque<Vec<f64>>,
}

impl HistoryStack {
    pub fn new(capacity: usize, dim: usize) -> Self {
        assert!(capacity > 0, "history capacity must be positive");
        HistoryStack {
            dim,
            entries: (0..capacity).map(|_| vec![0.0; dim]).collect(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Drops the oldest entry and appends `frame`.
    pub fn push(&mut self, frame: &[f64]) -> Result<()> {
        ensure_dim!(
            frame.len() == self.dim,
            "history holds {}-dimensional features, got {}",
            self.dim,
            frame.len()
        );
        self.entries.pop_front();
        self.entries.push_back(frame.to_vec());
        Ok(())
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.entries.iter().map(Vec::as_slice)
    }

    pub fn newest(&self) -> &[f64] {
        self.entries.back().expect("history is never empty")
    }
}

/// Chronological pool: `boundary` observed frames followed by `boundary`
/// predicted frames.
#[derive(Debug, Clone)]
pub struct FeaturePool {
    frames: Vec<Var>,
    boundary: usize,
}

impl FeaturePool {
    pub fn frames(&self) -> &[Var] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Index of the first predicted frame; equals the history capacity.
    pub fn boundary(&self) -> usize {
        self.boundary
    }
}

/// Places the history (as constants) and the predicted futures on `tape`
/// as one pool.
pub fn build_pool(tape: &mut Tape<'_>, history: &HistoryStack, futures: &[Var]) -> Result<FeaturePool> {
    let l_d = history.capacity();
    ensure_dim!(
        futures.len() == l_d,
        "pool needs {l_d} predicted frames, got {}",
        futures.len()
    );
    for &f in futures {
        ensure_dim!(
            tape.value(f).len() == history.dim(),
            "predicted frame has {} dims, history {}",
            tape.value(f).len(),
            history.dim()
        );
    }
    let mut frames = Vec::with_capacity(2 * l_d);
    for entry in history.entries() {
        frames.push(tape.constant_vec(entry.to_vec()));
    }
    frames.extend_from_slice(futures);
    Ok(FeaturePool { frames, boundary: l_d })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64) -> Vec<f64> {
        vec![x, -x]
    }

    #[test]
    fn starts_as_zeros() {
        let h = HistoryStack::new(3, 2);
        assert_eq!(h.capacity(), 3);
        assert!(h.entries().all(|e| e == [0.0, 0.0]));
    }

    #[test]
    fn queue_semantics() {
        let mut h = HistoryStack::new(4, 2);
        for x in [1.0, 2.0, 3.0, 4.0] {
            h.push(&v(x)).unwrap();
        }
        let got: Vec<Vec<f64>> = h.entries().map(<[f64]>::to_vec).collect();
        assert_eq!(got, vec![v(1.0), v(2.0), v(3.0), v(4.0)]);
        h.push(&v(9.0)).unwrap();
        let got: Vec<Vec<f64>> = h.entries().map(<[f64]>::to_vec).collect();
        assert_eq!(got, vec![v(2.0), v(3.0), v(4.0), v(9.0)]);
        assert_eq!(h.newest(), v(9.0).as_slice());
        assert!(h.push(&[1.0]).is_err());
    }

    #[test]
    fn pool_layout() {
        let mut h = HistoryStack::new(2, 2);
        h.push(&v(1.0)).unwrap();
        h.push(&v(2.0)).unwrap();
        let mut tape = Tape::new();
        let g0 = tape.constant_vec(v(10.0));
        let g1 = tape.constant_vec(v(11.0));
        let pool = build_pool(&mut tape, &h, &[g0, g1]).unwrap();
        assert_eq!(pool.len(), 4);
        assert_eq!(pool.boundary(), 2);
        let values: Vec<Vec<f64>> = pool.frames().iter().map(|&f| tape.value(f).to_vec()).collect();
        assert_eq!(values, vec![v(1.0), v(2.0), v(10.0), v(11.0)]);
        assert_eq!(tape.value(pool.frames()[pool.boundary() - 1]), h.newest());

        assert!(build_pool(&mut tape, &h, &[g0]).is_err());
        let wrong = tape.constant_vec(vec![1.0]);
        assert!(build_pool(&mut tape, &h, &[g0, wrong]).is_err());
    }
}
