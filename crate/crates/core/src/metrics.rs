//! Binary classification metrics with `positive` as the positive class.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::label::Label;

/// Rows are the true class, columns the predicted class, both in
/// [`Label::index`] order.
pub type Confusion = [[u64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub confusion: Confusion,
    pub n: u64,
}

impl MetricReport {
    pub fn true_positives(&self) -> u64 {
        self.confusion[1][1]
    }
}

/// Field-wise summary of several reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Over the reports that define an AUC; `None` if none do.
    pub auc: Option<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Area under the ROC curve as the Mann–Whitney statistic: the share of
/// (positive, negative) pairs where the positive scores higher, ties 0.5.
pub fn auc(labels: &[Label], scores: &[f64]) -> Option<f64> {
    let n_pos = labels.iter().filter(|l| **l == Label::Positive).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks (in half units so everything stays integral).
    let mut pos_rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share the midrank (i + j + 2) / 2.
        let midrank_x2 = (i + j + 2) as u128;
        for &k in &order[i..=j] {
            if labels[k] == Label::Positive {
                pos_rank_sum_x2 += midrank_x2;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as u128;
    // 2·U = 2·R − n_pos(n_pos + 1); twice the count of won pairs + ties/2.
    let u_x2 = pos_rank_sum_x2 - n_pos * (n_pos + 1);
    Some(u_x2 as f64 / (2 * n_pos * n_neg as u128) as f64)
}

pub fn compute_metrics(true_labels: &[Label], predicted: &[Label], positive_scores: &[f64]) -> Result<MetricReport> {
    let n = true_labels.len();
    if predicted.len() != n || positive_scores.len() != n {
        return Err(Error::LengthMismatch(n, predicted.len(), positive_scores.len()));
    }
    if n == 0 {
        return Err(Error::Empty("metrics need at least one sample"));
    }
    if let Some(s) = positive_scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::ScoreOutOfRange(*s));
    }
    let mut confusion: Confusion = [[0; 2]; 2];
    for (t, p) in true_labels.iter().zip(predicted) {
        confusion[t.index()][p.index()] += 1;
    }
    let tp = confusion[1][1];
    let tn = confusion[0][0];
    let fp = confusion[0][1];
    let fn_ = confusion[1][0];
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricReport {
        accuracy: ratio(tp + tn, n as u64),
        precision,
        recall,
        f1,
        auc: auc(true_labels, positive_scores),
        confusion,
        n: n as u64,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    libm::sqrt(values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64)
}

fn summarize(reports: &[MetricReport], stat: fn(&[f64]) -> f64) -> Option<MetricSummary> {
    if reports.is_empty() {
        return None;
    }
    let field = |f: fn(&MetricReport) -> f64| stat(&reports.iter().map(f).collect::<Vec<_>>());
    let aucs: Vec<f64> = reports.iter().filter_map(|r| r.auc).collect();
    Some(MetricSummary {
        accuracy: field(|r| r.accuracy),
        precision: field(|r| r.precision),
        recall: field(|r| r.recall),
        f1: field(|r| r.f1),
        auc: (!aucs.is_empty()).then(|| stat(&aucs)),
    })
}

pub fn mean_report(reports: &[MetricReport]) -> Option<MetricSummary> {
    summarize(reports, mean)
}

pub fn std_report(reports: &[MetricReport]) -> Option<MetricSummary> {
    summarize(reports, std_dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    use Label::{Negative as N, Positive as P};

    fn brute_force_auc(labels: &[Label], scores: &[f64]) -> Option<f64> {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, li) in labels.iter().enumerate() {
            for (j, lj) in labels.iter().enumerate() {
                if *li == P && *lj == N {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        (pairs > 0.0).then(|| wins / pairs)
    }

    #[test]
    fn perfect_classifier() {
        let r = compute_metrics(&[N, N, P, P], &[N, N, P, P], &[0.1, 0.2, 0.8, 0.9]).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1, r.auc), (1.0, 1.0, 1.0, 1.0, Some(1.0)));
        assert_eq!(r.confusion, [[2, 0], [0, 2]]);
    }

    #[test]
    fn constant_scores_give_half_auc() {
        assert_eq!(auc(&[N, P, P, N, P], &[0.5; 5]), Some(0.5));
    }

    #[test]
    fn hand_auc_example() {
        assert_eq!(auc(&[N, N, P, P], &[0.1, 0.4, 0.35, 0.8]), Some(0.75));
    }

    #[test]
    fn single_class_auc_absent() {
        let r = compute_metrics(&[P, P], &[P, N], &[0.9, 0.2]).unwrap();
        assert_eq!(r.auc, None);
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn confusion_derived_metrics_by_hand() {
        // TP=3, FN=1, FP=2, TN=4.
        let t = [P, P, P, P, N, N, N, N, N, N];
        let p = [P, P, P, N, P, P, N, N, N, N];
        let r = compute_metrics(&t, &p, &[0.5; 10]).unwrap();
        assert_eq!(r.confusion, [[4, 2], [1, 3]]);
        assert!((r.accuracy - 0.7).abs() < 1e-15);
        assert!((r.precision - 0.6).abs() < 1e-15);
        assert!((r.recall - 0.75).abs() < 1e-15);
        assert!((r.f1 - 2.0 * 0.6 * 0.75 / 1.35).abs() < 1e-15);
    }

    #[test]
    fn no_positive_predictions_give_zero_f1() {
        let r = compute_metrics(&[P, N], &[N, N], &[0.4, 0.1]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn input_errors() {
        assert!(matches!(compute_metrics(&[P], &[P, N], &[0.1]), Err(Error::LengthMismatch(1, 2, 1))));
        assert!(matches!(compute_metrics(&[], &[], &[]), Err(Error::Empty(_))));
        assert!(matches!(compute_metrics(&[P], &[P], &[1.5]), Err(Error::ScoreOutOfRange(_))));
    }

    #[test]
    fn auc_matches_brute_force_on_random_sets() {
        let mut r = rng::stream(2024, &[b"auc"]);
        for _ in 0..200 {
            let n = r.random_range(1..=30);
            // Coarse score grid forces plenty of ties.
            let labels: Vec<Label> = (0..n).map(|_| if r.random_bool(0.6) { P } else { N }).collect();
            let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..8u8)) / 7.0).collect();
            let (a, b) = (auc(&labels, &scores), brute_force_auc(&labels, &scores));
            match (a, b) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12),
                (a, b) => assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn mean_and_std_are_fieldwise() {
        let a = compute_metrics(&[N, P], &[N, P], &[0.1, 0.9]).unwrap();
        let b = compute_metrics(&[N, P], &[P, P], &[0.6, 0.9]).unwrap();
        let m = mean_report(&[a, b]).unwrap();
        let s = std_report(&[a, b]).unwrap();
        assert!((m.accuracy - 0.75).abs() < 1e-12);
        assert!((s.accuracy - 0.25).abs() < 1e-12);
        assert_eq!(m.auc, Some(1.0));
        assert!(mean_report(&[]).is_none());
    }

    proptest! {
        #[test]
        fn metrics_are_bounded(data in proptest::collection::vec((any::<bool>(), any::<bool>(), 0.0f64..=1.0), 1..40)) {
            let t: Vec<Label> = data.iter().map(|d| if d.0 { P } else { N }).collect();
            let p: Vec<Label> = data.iter().map(|d| if d.1 { P } else { N }).collect();
            let s: Vec<f64> = data.iter().map(|d| d.2).collect();
            let r = compute_metrics(&t, &p, &s).unwrap();
            for v in [r.accuracy, r.precision, r.recall, r.f1, r.auc.unwrap_or(0.5)] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(r.confusion.iter().flatten().sum::<u64>(), r.n);
            let tp_tn = (r.confusion[0][0] + r.confusion[1][1]) as f64;
            prop_assert!((r.accuracy - tp_tn / r.n as f64).abs() < 1e-15);
        }
    }
}
