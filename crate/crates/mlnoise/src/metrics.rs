//! Ranking and thresholded evaluation metrics for multi-label predictions.
//!
//! Average precision is the non-interpolated step-wise area under the
//! precision–recall curve: items are sorted by score descending (ties broken
//! toward the lower index, so every metric is deterministic), and
//! `AP = Σ over positive-hit ranks k of (R_k − R_{k−1}) · P_k`, which equals
//! `(1/P) · Σ tp_k / k`. Classes with zero positives have undefined AP: they
//! are excluded from macro means (an undefined AP is not evidence of bad
//! ranking) and the exclusion count is reported alongside.
//!
//! * micro averaging flattens the (example, class) matrix row-major and
//!   treats every entry as one binary prediction;
//! * macro averaging computes per-class values and takes their unweighted
//!   mean.
//!
//! F1 binarizes at `score >= threshold` with `0/0` defined as 0, pooled
//! counts for micro and a mean of per-class F1 (over all classes) for macro.

use std::path::Path;

use crate::data::{LabelMatrix, ScoreMatrix};
use crate::error::{Error, Result};

/// Indices ordered by score descending, ties broken toward the lower index.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must not be NaN")
            .then(a.cmp(&b))
    });
    order
}

/// Non-interpolated average precision. Returns `None` when there are no
/// positive labels (AP is undefined, not zero). Lengths must match.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "average_precision needs equal-length scores and labels"
    );
    let total_pos = labels.iter().filter(|&&l| l == 1).count();
    if total_pos == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank0, &i) in ranking(scores).iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
            sum += tp as f64 / (rank0 + 1) as f64;
        }
    }
    Some(sum / total_pos as f64)
}

/// Precision–recall curve: one point per recall-advancing rank (the ranks
/// where a positive is hit), sorted by increasing recall. The step-wise area
/// under the returned points equals `average_precision` exactly; under score
/// ties this per-rank form is the one consistent with that area (a
/// per-distinct-threshold grouping would not be). `None` when there are no
/// positives.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Option<Vec<(f64, f64)>> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "pr_curve needs equal-length scores and labels"
    );
    let total_pos = labels.iter().filter(|&&l| l == 1).count();
    if total_pos == 0 {
        return None;
    }
    let mut points = Vec::with_capacity(total_pos);
    let mut tp = 0usize;
    for (rank0, &i) in ranking(scores).iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
            points.push((tp as f64 / total_pos as f64, tp as f64 / (rank0 + 1) as f64));
        }
    }
    Some(points)
}

fn flatten_labels(labels: &LabelMatrix) -> Vec<u8> {
    labels.array().iter().copied().collect()
}

/// AP over the row-major flattened (example, class) pairs.
pub fn map_micro(scores: &ScoreMatrix, labels: &LabelMatrix) -> Result<f64> {
    check_same_shape("map_micro", scores, labels)?;
    let flat_scores: Vec<f64> = scores.array().iter().copied().collect();
    average_precision(&flat_scores, &flatten_labels(labels))
        .ok_or_else(|| Error::NoPositives("map_micro: no positive labels at all".into()))
}

/// Per-class AP; `None` marks classes with zero positives.
pub fn per_class_average_precision(
    scores: &ScoreMatrix,
    labels: &LabelMatrix,
) -> Result<Vec<Option<f64>>> {
    check_same_shape("per_class_average_precision", scores, labels)?;
    let s = scores.array();
    let l = labels.array();
    Ok((0..s.ncols())
        .map(|c| {
            let col_scores: Vec<f64> = s.column(c).iter().copied().collect();
            let col_labels: Vec<u8> = l.column(c).iter().copied().collect();
            average_precision(&col_scores, &col_labels)
        })
        .collect())
}

/// Mean AP over classes that have at least one positive, together with the
/// number of classes excluded for having none.
pub fn map_macro(scores: &ScoreMatrix, labels: &LabelMatrix) -> Result<(f64, usize)> {
    let per_class = per_class_average_precision(scores, labels)?;
    macro_mean(&per_class)
}

fn macro_mean(per_class: &[Option<f64>]) -> Result<(f64, usize)> {
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let excluded = per_class.len() - defined.len();
    if defined.is_empty() {
        return Err(Error::NoPositives(
            "map_macro: no class has a positive label".into(),
        ));
    }
    Ok((defined.iter().sum::<f64>() / defined.len() as f64, excluded))
}

/// How per-entry results are pooled into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    /// Pool TP/FP/FN over every (example, class) entry.
    Micro,
    /// Mean of per-class F1 over all classes, `0/0` defined as 0.
    Macro,
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 after binarizing scores at `score >= threshold`.
pub fn f1_at_threshold(
    scores: &ScoreMatrix,
    labels: &LabelMatrix,
    threshold: f64,
    averaging: Averaging,
) -> Result<f64> {
    check_same_shape("f1_at_threshold", scores, labels)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "f1 threshold must lie strictly inside (0, 1); got {threshold}"
        )));
    }
    let s = scores.array();
    let l = labels.array();
    match averaging {
        Averaging::Micro => {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (&score, &label) in s.iter().zip(l.iter()) {
                let pred = score >= threshold;
                match (pred, label == 1) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            Ok(f1_from_counts(tp, fp, fn_))
        }
        Averaging::Macro => {
            let mut sum = 0.0;
            for c in 0..s.ncols() {
                let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
                for (&score, &label) in s.column(c).iter().zip(l.column(c).iter()) {
                    let pred = score >= threshold;
                    match (pred, label == 1) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => {}
                    }
                }
                sum += f1_from_counts(tp, fp, fn_);
            }
            Ok(sum / s.ncols() as f64)
        }
    }
}

/// The default binarization threshold used throughout.
pub const DEFAULT_F1_THRESHOLD: f64 = 0.5;

/// Full evaluation of one score matrix against binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub map_micro: f64,
    pub map_macro: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    /// Per-class AP; `None` for classes with zero positives.
    pub per_class_ap: Vec<Option<f64>>,
    /// Number of classes excluded from the macro mean.
    pub n_classes_excluded_from_macro: usize,
}

impl MetricsReport {
    pub fn compute(
        scores: &ScoreMatrix,
        labels: &LabelMatrix,
        threshold: f64,
    ) -> Result<MetricsReport> {
        let per_class_ap = per_class_average_precision(scores, labels)?;
        let (map_macro, excluded) = macro_mean(&per_class_ap)?;
        Ok(MetricsReport {
            map_micro: map_micro(scores, labels)?,
            map_macro,
            f1_micro: f1_at_threshold(scores, labels, threshold, Averaging::Micro)?,
            f1_macro: f1_at_threshold(scores, labels, threshold, Averaging::Macro)?,
            per_class_ap,
            n_classes_excluded_from_macro: excluded,
        })
    }
}

/// One-row CSV with columns
/// `map_micro,map_macro,f1_micro,f1_macro,excluded_classes`.
pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let record = [
        report.map_micro.to_string(),
        report.map_macro.to_string(),
        report.f1_micro.to_string(),
        report.f1_macro.to_string(),
        report.n_classes_excluded_from_macro.to_string(),
    ];
    let write = |w: &mut csv::Writer<std::fs::File>| -> std::result::Result<(), csv::Error> {
        w.write_record(["map_micro", "map_macro", "f1_micro", "f1_macro", "excluded_classes"])?;
        w.write_record(&record)?;
        w.flush().map_err(csv::Error::from)
    };
    write(&mut writer).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })
}

fn check_same_shape(context: &'static str, scores: &ScoreMatrix, labels: &LabelMatrix) -> Result<()> {
    if scores.array().dim() != labels.array().dim() {
        return Err(Error::ShapeMismatch {
            context,
            expected: format!("{:?} labels", scores.array().dim()),
            actual: format!("{:?}", labels.array().dim()),
        });
    }
    Ok(())
}

// ======================================================================
