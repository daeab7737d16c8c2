//! Brute-force oracles used by the integration tests to cross-check the
//! library's ranking and threshold metrics.
//!
//! Everything here is written straight from the definitions with O(n^2)
//! rank counting — no sorting, no code shared with the library — so a bug
//! in the library cannot hide in its own oracle.

#![allow(dead_code)] // each test binary uses a different subset

/// 1-based rank of item `i` under "higher score first, ties broken toward
/// the lower index": one plus the number of items that strictly precede it.
fn naive_rank(scores: &[f64], i: usize) -> usize {
    let mut preceding = 0;
    for j in 0..scores.len() {
        if scores[j] > scores[i] || (scores[j] == scores[i] && j < i) {
            preceding += 1;
        }
    }
    1 + preceding
}

/// Average precision as the mean, over relevant items, of precision at each
/// relevant item's rank. `None` when there are no relevant items.
pub fn naive_average_precision(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_positive = labels.iter().filter(|&&l| l == 1).count();
    if n_positive == 0 {
        return None;
    }
    let mut total = 0.0;
    for i in 0..scores.len() {
        if labels[i] != 1 {
            continue;
        }
        let rank_i = naive_rank(scores, i);
        let true_positives_at_rank = (0..scores.len())
            .filter(|&j| labels[j] == 1 && naive_rank(scores, j) <= rank_i)
            .count();
        total += true_positives_at_rank as f64 / rank_i as f64;
    }
    Some(total / n_positive as f64)
}

/// Micro AP: pool every (example, class) entry in row-major order into one
/// ranking problem.
pub fn naive_map_micro(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Option<f64> {
    let flat_scores: Vec<f64> = scores.iter().flatten().copied().collect();
    let flat_labels: Vec<u8> = labels.iter().flatten().copied().collect();
    naive_average_precision(&flat_scores, &flat_labels)
}

/// Macro AP: unweighted mean of per-class APs over classes that have at
/// least one relevant item, plus the number of classes excluded for having
/// none.
pub fn naive_map_macro(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Option<(f64, usize)> {
    let n_classes = scores.first().map_or(0, Vec::len);
    let mut total = 0.0;
    let mut counted = 0;
    let mut excluded = 0;
    for class in 0..n_classes {
        let column_scores: Vec<f64> = scores.iter().map(|row| row[class]).collect();
        let column_labels: Vec<u8> = labels.iter().map(|row| row[class]).collect();
        match naive_average_precision(&column_scores, &column_labels) {
            Some(ap) => {
                total += ap;
                counted += 1;
            }
            None => excluded += 1,
        }
    }
    if counted == 0 {
        None
    } else {
        Some((total / counted as f64, excluded))
    }
}

/// Per-class AP, `None` for classes without a relevant item.
pub fn naive_per_class_ap(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Vec<Option<f64>> {
    let n_classes = scores.first().map_or(0, Vec::len);
    (0..n_classes)
        .map(|class| {
            let column_scores: Vec<f64> = scores.iter().map(|row| row[class]).collect();
            let column_labels: Vec<u8> = labels.iter().map(|row| row[class]).collect();
            naive_average_precision(&column_scores, &column_labels)
        })
        .collect()
}

fn f1_of_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denominator = 2 * tp + fp + fn_;
    if denominator == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denominator as f64
    }
}

/// Micro F1 at a threshold: predict 1 when score >= threshold, pool counts
/// over every entry.
pub fn naive_f1_micro(scores: &[Vec<f64>], labels: &[Vec<u8>], threshold: f64) -> f64 {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (score_row, label_row) in scores.iter().zip(labels) {
        for (&s, &y) in score_row.iter().zip(label_row) {
            let predicted = s >= threshold;
            match (predicted, y == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    f1_of_counts(tp, fp, fn_)
}

/// Macro F1 at a threshold: per-class F1 (0/0 := 0) averaged over ALL
/// classes, including classes with no positives at all.
pub fn naive_f1_macro(scores: &[Vec<f64>], labels: &[Vec<u8>], threshold: f64) -> f64 {
    let n_classes = scores.first().map_or(0, Vec::len);
    if n_classes == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for class in 0..n_classes {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for (score_row, label_row) in scores.iter().zip(labels) {
            let predicted = score_row[class] >= threshold;
            match (predicted, label_row[class] == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        total += f1_of_counts(tp, fp, fn_);
    }
    total / n_classes as f64
}

#[cfg(test)]
mod oracle_self_checks {
    use super::*;

    #[test]
    fn rank_breaks_ties_toward_lower_index() {
        let scores = [0.5, 0.9, 0.5];
        assert_eq!(naive_rank(&scores, 1), 1);
        assert_eq!(naive_rank(&scores, 0), 2);
        assert_eq!(naive_rank(&scores, 2), 3);
    }

    #[test]
    fn ap_hand_example() {
        // Ranking: 0.9 (pos), 0.8 (neg), 0.3 (pos) -> (1/1 + 2/3) / 2 = 5/6.
        let ap = naive_average_precision(&[0.9, 0.8, 0.3], &[1, 0, 1]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn f1_micro_hand_example() {
        // Predictions at 0.5: [[1,0],[1,1]]; labels [[1,1],[0,1]]
        // -> tp=2, fp=1, fn=1 -> F1 = 4/6.
        let scores = vec![vec![0.6, 0.4], vec![0.7, 0.9]];
        let labels = vec![vec![1, 1], vec![0, 1]];
        let f1 = naive_f1_micro(&scores, &labels, 0.5);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
    }
}
