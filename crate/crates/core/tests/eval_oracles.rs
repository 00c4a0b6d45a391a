mod common;

use std::collections::HashMap;

use num::{BigRational, ToPrimitive};
use proptest::prelude::*;
use rand::Rng;
use samson::eval::*;
use samson::Error;

fn random_predictions(seed: u64, n: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut r = common::rng(seed);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
    let preds = labels
        .iter()
        .map(|&l| if r.random_bool(0.7) { l } else { r.random_range(0..k) })
        .collect();
    (preds, labels)
}

#[test]
fn confusion_matches_hashmap_tally() {
    for seed in 0..20 {
        let (preds, labels) = random_predictions(seed, 500, 6);
        let mut tally: HashMap<(usize, usize), u64> = HashMap::new();
        for (&p, &t) in preds.iter().zip(&labels) {
            *tally.entry((t, p)).or_default() += 1;
        }
        let cm = build_confusion(&preds, &labels).unwrap();
        for t in 0..6 {
            for p in 0..6 {
                assert_eq!(cm.get(t, p), tally.get(&(t, p)).copied().unwrap_or(0));
            }
        }
        assert_eq!(cm.total(), 500);
    }
}

#[test]
fn accuracy_matches_direct_count() {
    for seed in 0..20 {
        let (preds, labels) = random_predictions(100 + seed, 317, 6);
        let m = metrics(&build_confusion(&preds, &labels).unwrap()).unwrap();
        let correct = preds.iter().zip(&labels).filter(|(p, t)| p == t).count();
        assert_eq!(m.correct as usize, correct);
        assert_eq!(m.overall, correct as f64 / 317.0);
        for c in 0..6 {
            let total = labels.iter().filter(|&&t| t == c).count();
            let hit = preds.iter().zip(&labels).filter(|(p, t)| **t == c && **p == c).count();
            assert_eq!(m.per_class[c].total as usize, total);
            assert_eq!(m.per_class[c].correct as usize, hit);
        }
    }
}

#[test]
fn overall_is_the_support_weighted_mean_of_class_accuracies() {
    for seed in 0..20 {
        let (preds, labels) = random_predictions(200 + seed, 251, 6);
        let m = metrics(&build_confusion(&preds, &labels).unwrap()).unwrap();
        let mut exact = BigRational::from_integer(0.into());
        for a in &m.per_class {
            if a.total > 0 {
                let acc = BigRational::new(a.correct.into(), a.total.into());
                exact += acc * BigRational::new(a.total.into(), m.total.into());
            }
        }
        assert_eq!(exact, BigRational::new(m.correct.into(), m.total.into()));
        assert!((exact.to_f64().unwrap() - m.overall).abs() < 1e-12);
    }
}

#[test]
fn empty_class_has_undefined_accuracy() {
    let m = metrics(&build_confusion(&[0, 1, 1], &[0, 1, 0]).unwrap()).unwrap();
    assert_eq!(m.per_class[0].accuracy(), Some(0.5));
    assert_eq!(m.per_class[5].accuracy(), None);
    assert!(m.format_records().contains("class\t5\t0\t0\t-"));
}

#[test]
fn degenerate_inputs_are_rejected() {
    let empty = ConfusionMatrix::from_counts(vec![vec![0; 6]; 6]).unwrap();
    assert!(matches!(metrics(&empty), Err(Error::EmptyMatrix)));
    assert!(matches!(build_confusion(&[6], &[0]), Err(Error::InvalidClass(6))));
    assert!(matches!(build_confusion(&[0, 1], &[0]), Err(Error::LengthMismatch(..))));
}

#[test]
fn table_rows_sum_to_one_hundred_percent() {
    let (preds, labels) = random_predictions(300, 600, 6);
    let cm = build_confusion(&preds, &labels).unwrap();
    for line in cm.format_table().lines().skip(1) {
        let pct: f64 = line
            .split_whitespace()
            .filter_map(|f| f.strip_suffix('%'))
            .map(|f| f.parse::<f64>().unwrap())
            .sum();
        // six one-decimal roundings
        assert!((pct - 100.0).abs() <= 0.3, "{line}");
    }
}

fn label_vec() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..6, 12..120).prop_filter("every present class needs two samples", |v| {
        (0..6).all(|c| {
            let n = v.iter().filter(|&&l| l == c).count();
            n == 0 || n >= 2
        })
    })
}

proptest! {
    #[test]
    fn stratified_split_partitions_and_keeps_proportions(
        labels in label_vec(),
        f in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let spec = SplitSpec { train_fraction: f, seed, stratified: true };
        let s = split_labels(&labels, &spec).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for c in 0..6 {
            let n = labels.iter().filter(|&&l| l == c).count();
            let k = s.train.iter().filter(|&&i| labels[i] == c).count();
            prop_assert!((k as f64 - f * n as f64).abs() <= 0.5 + 1e-9);
        }
        prop_assert_eq!(split_labels(&labels, &spec).unwrap(), s);
    }

    #[test]
    fn plain_split_partitions(n in 1usize..200, f in 0.05f64..0.95, seed in any::<u64>()) {
        let labels = vec![0; n];
        let s = split_labels(&labels, &SplitSpec { train_fraction: f, seed, stratified: false }).unwrap();
        prop_assert_eq!(s.train.len() + s.test.len(), n);
        prop_assert!((s.train.len() as f64 - f * n as f64).abs() <= 0.5 + 1e-9);
    }
}

#[test]
fn singleton_class_cannot_be_stratified() {
    let spec = SplitSpec::default();
    assert!(matches!(split_labels(&[0, 0, 1], &spec), Err(Error::TooFewSamples(_))));
    assert!(matches!(split_labels(&[], &spec), Err(Error::EmptyDataset)));
    let bad = SplitSpec { train_fraction: 1.0, ..spec };
    assert!(matches!(split_labels(&[0, 0], &bad), Err(Error::Config(_))));
}
