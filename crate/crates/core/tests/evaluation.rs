mod common;

use std::collections::BTreeSet;

use common::{mann_whitney, separable, window};
use fetopo::dataset::{loso_folds, stratified_split, Dataset, SplitMode};
use fetopo::metrics::{confusion, f1_score, rates, roc_auc, EvalReport};
use fetopo::train::fold_indices;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores on a coarse grid so that ties are common.
fn scored_set() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..200, any::<u64>()).prop_map(|(n, seed)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores = labels
            .iter()
            .map(|&y| ((r.random_range(0.0..1.0) + 0.3 * f64::from(y)) * 20.0).round() / 26.0)
            .collect();
        (scores, labels)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn auc_is_the_mann_whitney_statistic((scores, labels) in scored_set()) {
        prop_assert!((roc_auc(&scores, &labels) - mann_whitney(&scores, &labels)).abs() < 1e-9);
    }

    #[test]
    fn auc_ignores_monotone_transforms((scores, labels) in scored_set(), k in 0.1f64..5.0) {
        let warped: Vec<f64> = scores.iter().map(|s| (k * s).exp() - 7.0).collect();
        prop_assert!((roc_auc(&scores, &labels) - roc_auc(&warped, &labels)).abs() < 1e-12);
    }

    #[test]
    fn rates_match_a_recount((scores, labels) in scored_set(), thr in 0.0f64..1.0) {
        let c = confusion(&scores, &labels, thr);
        let pred: Vec<u8> = scores.iter().map(|&s| u8::from(s >= thr)).collect();
        let count = |p: u8, y: u8| pred.iter().zip(&labels).filter(|(a, b)| **a == p && **b == y).count();
        let (tp, tn, fp, fnn) = (count(1, 1), count(0, 0), count(1, 0), count(0, 1));
        prop_assert_eq!(c, [[tn, fp], [fnn, tp]]);
        let r = rates(&c);
        let n = labels.len() as f64;
        prop_assert_eq!(r.accuracy, (tp + tn) as f64 / n);
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fnn == 0 { 0.0 } else { tp as f64 / (tp + fnn) as f64 };
        prop_assert_eq!(r.precision, precision);
        prop_assert_eq!(r.recall, recall);
        prop_assert_eq!(r.f1, f1_score(precision, recall));
        let rep = EvalReport::from_scores(&scores, &labels, thr).unwrap();
        prop_assert_eq!(rep.confusion, c);
    }

    #[test]
    fn jsonl_round_trip_is_byte_exact(seed in any::<u64>()) {
        let ds = Dataset::new(separable(&mut ChaCha8Rng::seed_from_u64(seed))).unwrap();
        let mut a = Vec::new();
        ds.write_jsonl(&mut a).unwrap();
        let back = Dataset::read_jsonl(a.as_slice()).unwrap();
        let mut b = Vec::new();
        back.write_jsonl(&mut b).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back.windows(), ds.windows());
    }

    #[test]
    fn splits_are_disjoint_and_stratified(seed in any::<u64>(), frac in 0.05f64..0.6, record_level in any::<bool>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut ws = Vec::new();
        for rec in 0..r.random_range(4..12) {
            let label = u8::from(rec % 3 == 0);
            for k in 0..r.random_range(3..30) {
                ws.push(window("S", rec, k, label, [1.0; 5]));
            }
        }
        let ds = Dataset::new(ws).unwrap();
        let mode = if record_level { SplitMode::RecordLevel } else { SplitMode::WindowLevel };
        let split = stratified_split(&ds, "S", frac, seed, mode, false).unwrap();
        let train: BTreeSet<_> = split.train_indices.iter().collect();
        prop_assert!(split.test_indices.iter().all(|i| !train.contains(i)));
        prop_assert_eq!(train.len() + split.test_indices.len(), ds.len());
        if !record_level {
            for label in [0u8, 1] {
                let side = |idx: &[usize]| idx.iter().filter(|&&i| ds.windows()[i].label == label).count();
                let (tr, te) = (side(&split.train_indices), side(&split.test_indices));
                let n = (tr + te) as f64;
                prop_assert!((te as f64 / n - frac).abs() <= 1.0 / n);
            }
        } else {
            let recs = |idx: &[usize]| idx.iter().map(|&i| ds.windows()[i].record_id.clone()).collect::<BTreeSet<_>>();
            prop_assert!(recs(&split.train_indices).is_disjoint(&recs(&split.test_indices)));
        }
    }
}

#[test]
fn hundred_seeded_sets_match_mann_whitney() {
    for seed in 0..100u64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = r.random_range(10..300);
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&y| ((r.random_range(0.0..1.0) + 0.2 * f64::from(y)) * 50.0).round() / 50.0)
            .collect();
        let gap = (roc_auc(&scores, &labels) - mann_whitney(&scores, &labels)).abs();
        assert!(gap < 1e-9, "seed {seed}: {gap}");
    }
}

#[test]
fn loso_folds_partition_subjects() {
    let mut ws = separable(&mut ChaCha8Rng::seed_from_u64(3));
    ws.extend(
        separable(&mut ChaCha8Rng::seed_from_u64(4))
            .into_iter()
            .map(|mut w| {
                w.subject_id = format!("{}2", w.subject_id);
                w.record_id = format!("{}x", w.record_id);
                w
            }),
    );
    let ds = Dataset::new(ws).unwrap();
    let folds = loso_folds(&ds).unwrap();
    let held: Vec<&str> = folds.iter().map(|f| f.test_subject.as_str()).collect();
    assert_eq!(held, ds.subjects().into_iter().collect::<Vec<_>>());
    for f in &folds {
        let (train, test) = fold_indices(&ds, f, false);
        let test_keys: BTreeSet<_> = test.iter().map(|&i| ds.windows()[i].key()).collect();
        assert!(train
            .iter()
            .all(|&i| !test_keys.contains(&ds.windows()[i].key())));
        assert!(train
            .iter()
            .all(|&i| ds.windows()[i].subject_id != f.test_subject));
        assert!(test
            .iter()
            .all(|&i| ds.windows()[i].subject_id == f.test_subject));
        assert_eq!(train.len() + test.len(), ds.len());
    }
}
