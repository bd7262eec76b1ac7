//! Multi-label evaluation metrics.
//!
//! Ranking metrics (per-class AP and its macro mean, ROC-AUC) and
//! thresholded metrics (micro-F1, exact-match accuracy, argmax accuracy
//! as a side column).  Definitions are pinned so results are comparable
//! across implementations:
//!
//! * AP is non-interpolated: sum of precision at each positive's rank
//!   divided by the positive count, ranks ordered by descending score
//!   with ties broken by ascending original index.
//! * ROC-AUC is the Mann-Whitney statistic; tied score pairs count
//!   half.
//! * The decision threshold is 0.5 for both predictions (`score >=
//!   0.5`) and target binarization (`y >= 0.5`).
//! * The macro AUPRC column equals the macro AP column by construction
//!   (one ranking computation backs both) and is reported separately
//!   so downstream tables keep both names.
//!
//! Classes with no positive are excluded from macro AP and flagged;
//! classes missing a positive or a negative are likewise excluded from
//! macro ROC-AUC.  Excluded entries surface as NaN in `per_class_*` and
//! as `NaN` cells in the CSV row.

use crate::data::TargetMatrix;
use crate::error::Error;
use crate::Result;
use ndarray::Array2;
use std::path::Path;

/// Decision threshold for predictions and target binarization.
pub const THRESHOLD: f64 = 0.5;

/// Non-interpolated average precision.  Returns `None` when there is no
/// positive label.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if labels[idx] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// Mann-Whitney ROC-AUC with tied pairs at half weight.  Returns `None`
/// unless both a positive and a negative are present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let p = labels.iter().filter(|&&l| l).count() as u64;
    let n = labels.len() as u64 - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut concordant = 0u64;
    let mut tied = 0u64;
    let mut neg_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut pos_here = 0u64;
        let mut neg_here = 0u64;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        concordant += pos_here * neg_below;
        tied += pos_here * neg_here;
        neg_below += neg_here;
        i = j;
    }
    Some((concordant as f64 + 0.5 * tied as f64) / (p as f64 * n as f64))
}

/// Micro-F1 at the given threshold; TP/FP/FN are pooled over every
/// (sample, class) cell.  A zero denominator yields 0.
pub fn f1_micro(scores: &Array2<f64>, targets: &Array2<f64>, threshold: f64) -> f64 {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (s, y) in scores.iter().zip(targets.iter()) {
        let pred = *s >= threshold;
        let truth = *y >= THRESHOLD;
        match (pred, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Fraction of rows whose entire thresholded prediction vector equals
/// the binarized label row.
pub fn exact_match(scores: &Array2<f64>, targets: &Array2<f64>, threshold: f64) -> f64 {
    let n = scores.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut correct = 0usize;
    for row in 0..n {
        let all = (0..scores.ncols()).all(|c| {
            (scores[[row, c]] >= threshold) == (targets[[row, c]] >= THRESHOLD)
        });
        if all {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

/// Fraction of rows whose top-scoring class (ties resolved to the
/// lowest index) is one of the row's positives.  Rows without a
/// positive are skipped; all-skipped input yields 0.
pub fn argmax_accuracy(scores: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    let mut considered = 0usize;
    let mut correct = 0usize;
    for row in 0..scores.nrows() {
        let has_positive = (0..targets.ncols()).any(|c| targets[[row, c]] >= THRESHOLD);
        if !has_positive {
            continue;
        }
        considered += 1;
        let mut best = 0usize;
        for c in 1..scores.ncols() {
            if scores[[row, c]] > scores[[row, best]] {
                best = c;
            }
        }
        if targets[[row, best]] >= THRESHOLD {
            correct += 1;
        }
    }
    if considered == 0 {
        0.0
    } else {
        correct as f64 / considered as f64
    }
}

/// Full evaluation over a score matrix.  Soft targets are binarized at
/// 0.5; flagged classes are excluded from the macro averages.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Macro mean AP over classes with at least one positive.
    pub map: f64,
    /// Per-class AP; NaN for flagged classes.
    pub per_class_ap: Vec<f64>,
    /// Equal to `map` by construction; kept as its own column.
    pub auprc_macro: f64,
    /// Macro mean ROC-AUC over classes with a positive and a negative;
    /// NaN per class when undefined.
    pub roc_auc_macro: f64,
    pub per_class_auc: Vec<f64>,
    pub f1_micro: f64,
    pub exact_match_acc: f64,
    /// Side column: top-1 correctness against the positive set.
    pub argmax_acc: f64,
    pub n_samples: usize,
    /// Classes excluded from macro AP (no positive label).
    pub skipped_ap: Vec<usize>,
    /// Classes excluded from macro ROC-AUC (single-class labels).
    pub skipped_auc: Vec<usize>,
}

pub fn evaluate(scores: &Array2<f64>, targets: &TargetMatrix) -> Result<MetricReport> {
    let (n, c) = scores.dim();
    if targets.array().dim() != (n, c) {
        return Err(Error::ShapeMismatch(format!(
            "scores are {:?} but targets are {:?}",
            scores.dim(),
            targets.array().dim()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidData("empty evaluation set".into()));
    }
    for ((r, col), v) in scores.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::InvalidData(format!(
                "non-finite score {v} at row {r}, column {col}"
            )));
        }
    }

    let mut per_class_ap = vec![f64::NAN; c];
    let mut per_class_auc = vec![f64::NAN; c];
    let mut skipped_ap = Vec::new();
    let mut skipped_auc = Vec::new();
    let mut ap_sum = 0.0;
    let mut ap_n = 0usize;
    let mut auc_sum = 0.0;
    let mut auc_n = 0usize;

    let mut col_scores = vec![0.0; n];
    let mut col_labels = vec![false; n];
    for class in 0..c {
        for row in 0..n {
            col_scores[row] = scores[[row, class]];
            col_labels[row] = targets.array()[[row, class]] >= THRESHOLD;
        }
        match average_precision(&col_scores, &col_labels) {
            Some(ap) => {
                per_class_ap[class] = ap;
                ap_sum += ap;
                ap_n += 1;
            }
            None => skipped_ap.push(class),
        }
        match roc_auc(&col_scores, &col_labels) {
            Some(auc) => {
                per_class_auc[class] = auc;
                auc_sum += auc;
                auc_n += 1;
            }
            None => skipped_auc.push(class),
        }
    }

    let map = if ap_n > 0 { ap_sum / ap_n as f64 } else { f64::NAN };
    let roc_auc_macro = if auc_n > 0 {
        auc_sum / auc_n as f64
    } else {
        f64::NAN
    };
    Ok(MetricReport {
        map,
        per_class_ap,
        auprc_macro: map,
        roc_auc_macro,
        per_class_auc,
        f1_micro: f1_micro(scores, targets.array(), THRESHOLD),
        exact_match_acc: exact_match(scores, targets.array(), THRESHOLD),
        argmax_acc: argmax_accuracy(scores, targets.array()),
        n_samples: n,
        skipped_ap,
        skipped_auc,
    })
}

impl MetricReport {
    pub fn num_classes(&self) -> usize {
        self.per_class_ap.len()
    }

    /// Stable CSV header: summary columns then per-class AP columns.
    pub fn csv_header(num_classes: usize) -> String {
        let mut cols = vec![
            "map".to_string(),
            "auprc_macro".to_string(),
            "roc_auc_macro".to_string(),
            "f1_micro".to_string(),
            "exact_match_acc".to_string(),
            "argmax_acc".to_string(),
            "n_samples".to_string(),
        ];
        for i in 0..num_classes {
            cols.push(format!("ap_{i}"));
        }
        cols.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let mut cols = vec![
            format!("{}", self.map),
            format!("{}", self.auprc_macro),
            format!("{}", self.roc_auc_macro),
            format!("{}", self.f1_micro),
            format!("{}", self.exact_match_acc),
            format!("{}", self.argmax_acc),
            format!("{}", self.n_samples),
        ];
        for ap in &self.per_class_ap {
            cols.push(format!("{ap}"));
        }
        cols.join(",")
    }

    /// Write header plus this report's single row, LF-terminated.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let text = format!(
            "{}\n{}\n",
            MetricReport::csv_header(self.num_classes()),
            self.to_csv_row()
        );
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn ap_worked_example() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ap_perfect_and_inverted_rankings() {
        let ap = average_precision(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(ap, 1.0);
        // Both positives ranked last: precision 1/3 and 2/4.
        let ap = average_precision(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap();
        assert!((ap - (1.0 / 3.0 + 2.0 / 4.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ap_ties_break_by_original_index() {
        // Equal scores: order is index order, so the positive at index 0
        // ranks first but the one at index 3 ranks fourth.
        let ap = average_precision(&[0.5, 0.5, 0.5, 0.5], &[true, false, false, true]).unwrap();
        assert!((ap - (1.0 / 1.0 + 2.0 / 4.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ap_requires_a_positive() {
        assert!(average_precision(&[0.3, 0.4], &[false, false]).is_none());
    }

    #[test]
    fn auc_pair_examples() {
        let auc = roc_auc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert!((auc - 0.75).abs() < 1e-15);
        let auc = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
        let auc = roc_auc(&[0.4; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(auc, 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_none());
    }

    #[test]
    fn thresholded_metrics_hand_case() {
        let scores = array![[0.9, 0.1], [0.4, 0.8], [0.6, 0.6]];
        let targets = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        // Predictions: [1,0], [0,1], [1,1] -> TP=3, FP=1, FN=0.
        assert!((f1_micro(&scores, &targets, 0.5) - 6.0 / 7.0).abs() < 1e-15);
        assert!((exact_match(&scores, &targets, 0.5) - 2.0 / 3.0).abs() < 1e-15);
        // Argmax rows: 0 -> class 0 correct; 1 -> class 1 correct;
        // 2 -> tie resolved to class 0, correct.
        assert_eq!(argmax_accuracy(&scores, &targets), 1.0);
    }

    #[test]
    fn all_zero_predictions_give_zero_f1() {
        let scores = array![[0.1, 0.2], [0.0, 0.3]];
        let targets = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(f1_micro(&scores, &targets, 0.5), 0.0);
    }

    #[test]
    fn evaluate_identity_case_is_all_ones() {
        let targets = TargetMatrix::new(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let scores = targets.array().clone();
        let report = evaluate(&scores, &targets).unwrap();
        assert_eq!(report.map, 1.0);
        assert_eq!(report.auprc_macro, 1.0);
        assert_eq!(report.roc_auc_macro, 1.0);
        assert_eq!(report.f1_micro, 1.0);
        assert_eq!(report.exact_match_acc, 1.0);
        assert_eq!(report.argmax_acc, 1.0);
        assert!(report.skipped_ap.is_empty());
    }

    #[test]
    fn evaluate_flags_degenerate_classes() {
        // Class 1 has no positives; class 2 has no negatives.
        let targets = TargetMatrix::new(array![[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]]).unwrap();
        let scores = array![[0.9, 0.4, 0.8], [0.2, 0.6, 0.7]];
        let report = evaluate(&scores, &targets).unwrap();
        assert_eq!(report.skipped_ap, vec![1]);
        assert!(report.per_class_ap[1].is_nan());
        assert_eq!(report.skipped_auc, vec![1, 2]);
        assert!(report.per_class_auc[2].is_nan());
        // Macro AP averages classes 0 and 2 only.
        let expect = (report.per_class_ap[0] + report.per_class_ap[2]) / 2.0;
        assert!((report.map - expect).abs() < 1e-15);
    }

    #[test]
    fn csv_row_has_stable_column_order() {
        let targets = TargetMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let scores = array![[0.8, 0.3], [0.1, 0.9]];
        let report = evaluate(&scores, &targets).unwrap();
        let header = MetricReport::csv_header(report.num_classes());
        assert_eq!(
            header,
            "map,auprc_macro,roc_auc_macro,f1_micro,exact_match_acc,argmax_acc,n_samples,ap_0,ap_1"
        );
        let row = report.to_csv_row();
        assert_eq!(row.split(',').count(), header.split(',').count());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        report.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.ends_with('\n'));
        assert_eq!(text.lines().count(), 2);
    }

    proptest! {
        #[test]
        fn ranking_metrics_survive_monotone_transforms(
            raw in proptest::collection::vec(0u32..1024, 4..24),
            labels in proptest::collection::vec(any::<bool>(), 4..24),
        ) {
            let n = raw.len().min(labels.len());
            let scores: Vec<f64> = raw[..n].iter().map(|&v| v as f64 / 1024.0).collect();
            let labels = &labels[..n];
            // 2x + 1 is exact on these dyadic scores: no new ties appear.
            let transformed: Vec<f64> = scores.iter().map(|&s| 2.0 * s + 1.0).collect();
            prop_assert_eq!(
                average_precision(&scores, labels),
                average_precision(&transformed, labels)
            );
            prop_assert_eq!(roc_auc(&scores, labels), roc_auc(&transformed, labels));
        }

        #[test]
        fn metrics_survive_row_permutations(seed in 0u64..500) {
            use rand::seq::SliceRandom;
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let n = 8;
            let c = 3;
            let mut scores = Array2::zeros((n, c));
            let mut targets = Array2::zeros((n, c));
            // Tie-free scores per column: AP's index tie-break would
            // otherwise make permutation invariance vacuously false.
            for col in 0..c {
                let mut ranks: Vec<usize> = (0..n).collect();
                ranks.shuffle(&mut rng);
                for row in 0..n {
                    scores[[row, col]] = (ranks[row] + 1) as f64 / (n + 1) as f64;
                }
            }
            for row in 0..n {
                for col in 0..c {
                    targets[[row, col]] = f64::from(rng.random_range(0..2));
                }
            }
            // Guarantee at least one positive per class.
            for col in 0..c {
                targets[[col, col]] = 1.0;
            }
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut scores_p = Array2::zeros((n, c));
            let mut targets_p = Array2::zeros((n, c));
            for (to, &from) in perm.iter().enumerate() {
                for col in 0..c {
                    scores_p[[to, col]] = scores[[from, col]];
                    targets_p[[to, col]] = targets[[from, col]];
                }
            }
            let a = evaluate(&scores, &TargetMatrix::new(targets).unwrap()).unwrap();
            let b = evaluate(&scores_p, &TargetMatrix::new(targets_p).unwrap()).unwrap();
            prop_assert_eq!(a.map.to_bits(), b.map.to_bits());
            prop_assert_eq!(a.roc_auc_macro.to_bits(), b.roc_auc_macro.to_bits());
            prop_assert_eq!(a.f1_micro.to_bits(), b.f1_micro.to_bits());
            prop_assert_eq!(a.exact_match_acc.to_bits(), b.exact_match_acc.to_bits());
        }
    }
}
