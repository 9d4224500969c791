mod oracles;

use kagrmn_core::{ConfusionMatrix, Sentiment};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use Sentiment::{Negative as Neg, Neutral as Neu, Positive as Pos};

#[test]
fn worked_example() {
    let m = ConfusionMatrix([[1, 1, 0], [0, 2, 0], [0, 0, 2]]).metrics();
    assert!((m.accuracy - 5.0 / 6.0).abs() <= 1e-9);
    assert!((m.per_class_f1[Neg.index()] - 2.0 / 3.0).abs() <= 1e-9);
    assert!((m.per_class_f1[Pos.index()] - 0.8).abs() <= 1e-9);
    assert!((m.per_class_f1[Neu.index()] - 1.0).abs() <= 1e-9);
    assert!((m.macro_f1 - (2.0 / 3.0 + 0.8 + 1.0) / 3.0).abs() <= 1e-9);
    assert!((m.macro_f1 - 0.8222).abs() < 1e-4);
    assert_eq!(m.total, 6);
    let pairs = [(Neg, Neg), (Neg, Pos), (Pos, Pos), (Pos, Pos), (Neu, Neu), (Neu, Neu)];
    assert_eq!(ConfusionMatrix::from_pairs(pairs).metrics(), m);
}

#[test]
fn perfect_predictions() {
    let m = ConfusionMatrix::from_pairs([(Neg, Neg), (Pos, Pos), (Neu, Neu)]).metrics();
    assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));
}

#[test]
fn absent_class_scores_zero() {
    let m = ConfusionMatrix::from_pairs([(Pos, Pos), (Neg, Neg)]).metrics();
    assert_eq!(m.per_class_f1[Neu.index()], 0.0);
    assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    let empty = ConfusionMatrix::new().metrics();
    assert_eq!(empty.accuracy, 0.0);
    assert_eq!(empty.macro_f1, 0.0);
}

#[test]
fn random_predictions_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(0..60);
        let pairs: Vec<(usize, usize)> = (0..n)
            .map(|_| (rng.random_range(0..3), rng.random_range(0..3)))
            .collect();
        let m = ConfusionMatrix::from_pairs(
            pairs
                .iter()
                .map(|&(g, p)| (Sentiment::from_index(g).unwrap(), Sentiment::from_index(p).unwrap())),
        )
        .metrics();
        let (acc, macro_f1, f1) = oracles::brute_force_metrics(&pairs);
        assert!((m.accuracy - acc).abs() <= 1e-12);
        assert!((m.macro_f1 - macro_f1).abs() <= 1e-12);
        assert!(oracles::max_abs_diff(&m.per_class_f1, &f1) <= 1e-12);
    }
}

#[test]
fn metrics_roundtrip_through_json() {
    let m = ConfusionMatrix::from_pairs([(Pos, Neg), (Neu, Neu)]).metrics();
    let text = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<kagrmn_core::Metrics>(&text).unwrap(), m);
}

proptest! {
    #[test]
    fn scores_are_bounded(cells in proptest::array::uniform9(0u64..20)) {
        let m = ConfusionMatrix([[cells[0], cells[1], cells[2]], [cells[3], cells[4], cells[5]], [cells[6], cells[7], cells[8]]]);
        let s = m.metrics();
        prop_assert!((0.0..=1.0).contains(&s.accuracy));
        prop_assert!((0.0..=1.0).contains(&s.macro_f1));
        prop_assert_eq!(s.total, cells.iter().sum::<u64>());
    }
}
