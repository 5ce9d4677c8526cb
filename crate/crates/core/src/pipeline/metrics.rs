//! Binary classification metrics over flattened (graph, label) decisions.

use serde::{Deserialize, Serialize};

/// Scores at or above this are counted as positive predictions.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub micro_f1: f64,
    /// `None` when the labels contain a single class.
    pub roc_auc: Option<f64>,
    /// `None` when there are no positive labels.
    pub pr_auc: Option<f64>,
    pub accuracy: f64,
}

pub fn metrics(scores: &[f64], labels: &[bool]) -> Metrics {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    Metrics {
        micro_f1: micro_f1(scores, labels),
        roc_auc: roc_auc(scores, labels),
        pr_auc: pr_auc(scores, labels),
        accuracy: accuracy(scores, labels),
    }
}

/// `2TP / (2TP + FP + FN)` at [`THRESHOLD`]. An empty confusion (no
/// positives predicted or present) counts as perfect agreement.
pub fn micro_f1(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fal) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= THRESHOLD, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fal += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fal;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn accuracy(scores: &[f64], labels: &[bool]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| (s >= THRESHOLD) == y)
        .count();
    correct as f64 / scores.len() as f64
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Area under the ROC curve via the Mann–Whitney statistic, tied scores
/// sharing their average rank.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += mean_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

/// Area under the precision–recall curve.
///
/// One curve point per distinct score threshold (predict positive when
/// `score ≥ t`), preceded by `(recall 0, precision of the first point)`,
/// integrated with the trapezoid rule over recall.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 {
        return None;
    }
    let order = descending(scores);
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            seen += 1;
            if labels[order[i]] {
                tp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / pos as f64, tp as f64 / seen as f64));
    }
    let mut prev = (0.0, points[0].1);
    let mut area = 0.0;
    for &(r, p) in &points {
        area += (r - prev.0) * (p + prev.1) / 2.0;
        prev = (r, p);
    }
    Some(area)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
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

    /// Threshold sweep over every observed score, counted from scratch.
    fn sweep_pr_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let pos = labels.iter().filter(|&&y| y).count() as f64;
        if pos == 0.0 {
            return None;
        }
        let mut thresholds = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let pts: Vec<(f64, f64)> = thresholds
            .iter()
            .map(|&t| {
                let sel: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
                let tp = sel.iter().filter(|&&i| labels[i]).count() as f64;
                (tp / pos, tp / sel.len() as f64)
            })
            .collect();
        let mut area = 0.0;
        let mut last = (0.0, pts[0].1);
        for p in pts {
            area += (p.0 - last.0) * (p.1 + last.1) / 2.0;
            last = p;
        }
        Some(area)
    }

    #[test]
    fn perfect_and_inverted() {
        let labels = [true, false];
        assert_eq!(roc_auc(&[0.9, 0.1], &labels), Some(1.0));
        assert_eq!(pr_auc(&[0.9, 0.1], &labels), Some(1.0));
        assert_eq!(roc_auc(&[0.1, 0.9], &labels), Some(0.0));
        assert_eq!(micro_f1(&[0.9, 0.1], &labels), 1.0);
        assert_eq!(accuracy(&[0.1, 0.9], &labels), 0.0);
    }

    #[test]
    fn single_class_is_null() {
        assert_eq!(roc_auc(&[0.3, 0.4], &[true, true]), None);
        assert_eq!(pr_auc(&[0.3, 0.4], &[false, false]), None);
        let m = metrics(&[0.3, 0.4], &[false, false]);
        assert!(m.roc_auc.is_none() && m.pr_auc.is_none());
        assert_eq!(serde_json::to_value(m).unwrap()["roc_auc"], serde_json::Value::Null);
    }

    #[test]
    fn uniform_scores_give_positive_fraction() {
        let labels = [true, false, false, true, false];
        assert!((pr_auc(&[0.5; 5], &labels).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(roc_auc(&[0.5; 5], &labels), Some(0.5));
    }

    #[test]
    fn random_vectors_match_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let scores: Vec<f64> = (0..20).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
            let labels: Vec<bool> = (0..20).map(|_| rng.random::<bool>()).collect();
            assert_eq!(roc_auc(&scores, &labels), pairwise_auc(&scores, &labels));
        }
    }

    #[test]
    fn exhaustive_small_inputs_match_oracles() {
        // every label pattern of length <= 12 with coarse, tie-heavy scores
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for len in 1..=12usize {
            for pattern in 0u32..(1 << len) {
                if pattern % 7 != 0 && len > 8 {
                    continue;
                }
                let labels: Vec<bool> = (0..len).map(|i| pattern >> i & 1 == 1).collect();
                let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
                let a = roc_auc(&scores, &labels);
                let b = pairwise_auc(&scores, &labels);
                match (a, b) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                    (a, b) => assert_eq!(a, b),
                }
                let a = pr_auc(&scores, &labels);
                let b = sweep_pr_auc(&scores, &labels);
                match (a, b) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                    (a, b) => assert_eq!(a, b),
                }
            }
        }
    }
}
