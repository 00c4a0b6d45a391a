//! Train/test splitting, confusion matrices and accuracy reporting.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::phantom::PhantomDataset;
use crate::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    /// Split each class separately so every class keeps the same ratio.
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
            seed: crate::nn::DEFAULT_SEED,
            stratified: true,
        }
    }
}

/// Sample indices of the two sides of a split, each ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `round(fraction * n)` with halves rounded up.
fn train_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 0.5).floor() as usize).min(n)
}

/// Split samples by label. Stratified splits put `round(f * n_c)` samples of
/// every class `c` into training, with exact halves going to training.
pub fn split_labels(labels: &[usize], spec: &SplitSpec) -> Result<Split> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    if spec.stratified {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        for c in 0..classes {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            if members.len() < 2 {
                return Err(Error::TooFewSamples(format!(
                    "class {c} has {} sample(s); a stratified split needs at least 2",
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            let k = train_count(spec.train_fraction, members.len());
            train.extend_from_slice(&members[..k]);
            test.extend_from_slice(&members[k..]);
        }
    } else {
        let mut all: Vec<usize> = (0..labels.len()).collect();
        all.shuffle(&mut rng);
        let k = train_count(spec.train_fraction, all.len());
        train.extend_from_slice(&all[..k]);
        test.extend_from_slice(&all[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

pub fn split_dataset(data: &PhantomDataset, spec: &SplitSpec) -> Result<Split> {
    split_labels(&data.labels(), spec)
}

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix {
            counts,
            class_names: (0..k).map(|c| format!("class {c}")).collect(),
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.counts.len() {
            return Err(Error::LengthMismatch(self.counts.len(), names.len()));
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|c| self.counts[c][c]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Aligned table of row-normalised percentages, true classes down the
    /// side and predictions across.
    pub fn format_table(&self) -> String {
        let k = self.classes();
        let label_w = self.class_names.iter().map(|n| n.len()).max().unwrap_or(0).max(10);
        let mut s = format!("{:<label_w$}", "true\\pred");
        for p in 0..k {
            write!(s, " {:>7}", p).unwrap();
        }
        s.push_str("       n\n");
        for t in 0..k {
            write!(s, "{:<label_w$}", self.class_names[t]).unwrap();
            let row = self.row_sum(t);
            for p in 0..k {
                if row == 0 {
                    write!(s, " {:>7}", "-").unwrap();
                } else {
                    let pct = 100.0 * self.counts[t][p] as f64 / row as f64;
                    write!(s, " {:>6.1}%", pct).unwrap();
                }
            }
            writeln!(s, " {:>7}", row).unwrap();
        }
        s
    }

    /// One `true<TAB>pred<TAB>count` line per cell, row-major.
    pub fn format_records(&self) -> String {
        let mut s = String::from("# true\tpred\tcount\n");
        for (t, row) in self.counts.iter().enumerate() {
            for (p, c) in row.iter().enumerate() {
                writeln!(s, "{t}\t{p}\t{c}").unwrap();
            }
        }
        s
    }
}

/// Tally predictions against labels over the six classes.
pub fn build_confusion(preds: &[usize], labels: &[usize]) -> Result<ConfusionMatrix> {
    build_confusion_k(preds, labels, NUM_CLASSES)
}

pub fn build_confusion_k(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch(preds.len(), labels.len()));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= classes {
            return Err(Error::InvalidClass(p));
        }
        if t >= classes {
            return Err(Error::InvalidClass(t));
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub correct: u64,
    pub total: u64,
}

impl ClassAccuracy {
    /// `None` for a class with no samples.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub correct: u64,
    pub total: u64,
    /// `trace / total`.
    pub overall: f64,
    pub per_class: Vec<ClassAccuracy>,
}

impl Metrics {
    /// `overall` and per-class accuracy lines; floats use the shortest
    /// representation that reads back to the same value.
    pub fn format_records(&self) -> String {
        let mut s = format!("overall\t{}\t{}\t{}\n", self.correct, self.total, self.overall);
        for (c, a) in self.per_class.iter().enumerate() {
            let acc = a.accuracy().map_or_else(|| "-".to_string(), |v| v.to_string());
            writeln!(s, "class\t{c}\t{}\t{}\t{acc}", a.correct, a.total).unwrap();
        }
        s
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let per_class: Vec<ClassAccuracy> = (0..cm.classes())
        .map(|c| ClassAccuracy {
            correct: cm.get(c, c),
            total: cm.row_sum(c),
        })
        .collect();
    for (c, a) in per_class.iter().enumerate() {
        if a.total == 0 {
            log::warn!("class {c} has no samples; its accuracy is undefined");
        }
    }
    let correct = cm.trace();
    Ok(Metrics {
        correct,
        total,
        overall: correct as f64 / total as f64,
        per_class,
    })
}
