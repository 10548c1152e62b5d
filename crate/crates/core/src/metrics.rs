//! Binary classification metrics at a fixed operating point plus
//! threshold-free ROC/PR curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `[[TN, FP], [FN, TP]]`.
pub type Confusion = [[usize; 2]; 2];

/// Predicted positive when `score >= threshold`.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Confusion {
    let mut c = [[0usize; 2]; 2];
    for (&s, &y) in scores.iter().zip(labels) {
        let pred = usize::from(s >= threshold);
        c[usize::from(y == 1)][pred] += 1;
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn rates(c: &Confusion) -> Rates {
    let [[tn, fp], [fn_, tp]] = *c;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Rates {
        accuracy: ratio(tp + tn, tn + fp + fn_ + tp),
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

/// Curve points at every distinct score threshold, from the strictest
/// (nothing predicted positive) to the loosest.
/// Returns `(fp, tp)` cumulative counts.
fn cumulative_counts(scores: &[f64], labels: &[u8]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![(0, 0)];
    let (mut fp, mut tp) = (0, 0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        out.push((fp, tp));
    }
    out
}

/// `(fpr, tpr)` points including `(0, 0)` and `(1, 1)`.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Vec<(f64, f64)> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    cumulative_counts(scores, labels)
        .into_iter()
        .map(|(fp, tp)| (ratio(fp, neg), ratio(tp, pos)))
        .collect()
}

/// `(recall, precision)` points; the first point is `(0, 1)`.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Vec<(f64, f64)> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    cumulative_counts(scores, labels)
        .into_iter()
        .map(|(fp, tp)| {
            if tp + fp == 0 {
                (0.0, 1.0)
            } else {
                (ratio(tp, pos), ratio(tp, tp + fp))
            }
        })
        .collect()
}

/// Trapezoidal area under a piecewise-linear curve given in x order.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// ROC AUC by trapezoidal integration. Defined as 0.5 when either class is
/// absent.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return 0.5;
    }
    trapezoid(&roc_curve(scores, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub confusion: Confusion,
    pub roc_points: Vec<(f64, f64)>,
    pub pr_points: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn from_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty set"));
        }
        if scores.len() != labels.len() {
            return Err(Error::invalid("scores and labels differ in length"));
        }
        let c = confusion(scores, labels, threshold);
        let r = rates(&c);
        Ok(EvalReport {
            n_samples: scores.len(),
            threshold,
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            auc: roc_auc(scores, labels),
            confusion: c,
            roc_points: roc_curve(scores, labels),
            pr_points: pr_curve(scores, labels),
        })
    }

    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            accuracy: self.accuracy,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            auc: self.auc,
        }
    }
}

/// The five scalar columns of a results table.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

impl MetricSummary {
    /// Arithmetic mean of each column.
    pub fn mean<'a>(rows: impl IntoIterator<Item = &'a MetricSummary>) -> MetricSummary {
        let mut acc = MetricSummary::default();
        let mut n = 0usize;
        for r in rows {
            acc.accuracy += r.accuracy;
            acc.precision += r.precision;
            acc.recall += r.recall;
            acc.f1 += r.f1;
            acc.auc += r.auc;
            n += 1;
        }
        if n > 0 {
            let k = n as f64;
            acc.accuracy /= k;
            acc.precision /= k;
            acc.recall /= k;
            acc.f1 /= k;
            acc.auc /= k;
        }
        acc
    }
}
