use lapnet::metrics::{calibrated_ap, per_frame_ap, EvaluationTable};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rank of frame `i` counted directly: frames with a higher score, or an
/// equal score and an earlier index, come before it.
fn rank_of(scores: &[f64], i: usize) -> usize {
    (0..scores.len())
        .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
        .count()
        + 1
}

/// AP with precision computed per positive by scanning every frame;
/// `w = 1` gives plain AP.
fn brute_ap(scores: &[f64], pos: &[bool], w: f64) -> Option<f64> {
    let n_pos = pos.iter().filter(|p| **p).count();
    if n_pos == 0 {
        return None;
    }
    let mut total = 0.0;
    for i in (0..scores.len()).filter(|&i| pos[i]) {
        let r = rank_of(scores, i);
        let above: Vec<usize> = (0..scores.len()).filter(|&j| rank_of(scores, j) <= r).collect();
        let tp = above.iter().filter(|&&j| pos[j]).count() as f64;
        let fp = above.len() as f64 - tp;
        total += tp / (tp + fp / w);
    }
    Some(total / n_pos as f64)
}

fn instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..60);
    // Coarse scores so ties occur.
    let scores = (0..n).map(|_| (rng.random_range(0..12) as f64) / 11.0).collect();
    let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    pos[0] = true;
    pos[n - 1] = false;
    (scores, pos)
}

#[test]
fn ap_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let (s, p) = instance(&mut rng);
        let a = per_frame_ap(&s, &p).unwrap();
        let b = brute_ap(&s, &p, 1.0).unwrap();
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
}

#[test]
fn cap_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let (s, p) = instance(&mut rng);
        let n_pos = p.iter().filter(|v| **v).count() as f64;
        let w = (p.len() as f64 - n_pos) / n_pos;
        let a = calibrated_ap(&s, &p).unwrap();
        let b = brute_ap(&s, &p, w).unwrap();
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
}

#[test]
fn balanced_cap_equals_ap() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let n = 2 * rng.random_range(1..30);
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut pos = vec![false; n];
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        for &i in &idx[..n / 2] {
            pos[i] = true;
        }
        assert_eq!(calibrated_ap(&scores, &pos), per_frame_ap(&scores, &pos));
    }
}

#[test]
fn hand_examples() {
    assert_eq!(per_frame_ap(&[0.9, 0.8, 0.7], &[false, true, false]), Some(0.5));
    assert_eq!(per_frame_ap(&[0.9, 0.8, 0.1], &[true, true, false]), Some(1.0));
    assert_eq!(calibrated_ap(&[0.9, 0.8, 0.1, 0.0], &[true, false, false, false]), Some(1.0));
    assert_eq!(per_frame_ap(&[0.5, 0.4], &[false, false]), None);
    assert_eq!(calibrated_ap(&[0.5, 0.4], &[true, true]), None);
}

#[test]
fn table_excludes_background_and_reports_skips() {
    let probs = vec![
        vec![0.05, 0.1, 0.1, 0.0],
        vec![0.1, 0.8, 0.1, 0.0],
        vec![0.2, 0.2, 0.6, 0.0],
        vec![0.2, 0.7, 0.1, 0.0],
    ];
    let labels = vec![Some(0), Some(1), Some(2), None];
    let t = EvaluationTable::compute(&probs, &labels, 4);
    assert_eq!(t.unlabeled_frames, 1);
    assert_eq!(t.skipped_classes, vec![3]);
    // Background scores badly but does not enter the mean.
    assert_eq!(t.per_class[0].ap, Some(1.0 / 3.0));
    assert_eq!(t.map, 1.0);
    assert_eq!(t.mcap, 1.0);
}

proptest! {
    #[test]
    fn monotone_transform_invariance(
        scores in prop::collection::vec(-3.0f64..3.0, 2..50),
        flags in prop::collection::vec(any::<bool>(), 50),
        a in 0.1f64..5.0,
        b in -2.0f64..2.0,
    ) {
        let pos: Vec<bool> = flags[..scores.len()].to_vec();
        let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
        prop_assert_eq!(per_frame_ap(&scores, &pos), per_frame_ap(&mapped, &pos));
        prop_assert_eq!(calibrated_ap(&scores, &pos), calibrated_ap(&mapped, &pos));
    }

    #[test]
    fn ap_in_unit_interval(scores in prop::collection::vec(0.0f64..1.0, 1..40), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos: Vec<bool> = scores.iter().map(|_| rng.random_bool(0.4)).collect();
        for v in [per_frame_ap(&scores, &pos), calibrated_ap(&scores, &pos)].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
