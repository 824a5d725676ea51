//! Binary classification metrics and a clustering agreement score.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric needs at least one positive and one negative label")]
    SingleClass,
    #[error("scores and labels have different lengths ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("metric input is empty")]
    Empty,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass);
    }
    Ok((positives, negatives))
}

/// Area under the ROC curve via the rank statistic with tie-averaged ranks,
/// equivalent to pairwise concordance with half credit for score ties.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (positives, negatives) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j averaged across the tie group.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let p = positives as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Area under the precision-recall curve by step integration over descending
/// score thresholds (tied scores handled as one threshold group).
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (positives, _) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let total_pos = positives as f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            if labels[idx] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        let recall = tp / total_pos;
        let precision = tp / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

/// F1 at a threshold: a score at or above `threshold` predicts positive.
/// Degenerate case (no true positives, nothing predicted or present) is 0.
pub fn f1(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&s, &l) in scores.iter().zip(labels) {
        let predicted = s >= threshold;
        match (predicted, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
    }
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp / denom)
}

/// Adjusted Rand index between two partitions given as per-item labels.
/// 1.0 for identical partitions, ~0 for independent ones.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |&x| x + 1);
    let kb = b.iter().max().map_or(0, |&x| x + 1);
    let mut contingency = vec![vec![0u64; kb]; ka];
    for i in 0..n {
        contingency[a[i]][b[i]] += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut sum_ij = 0.0;
    let mut row_sums = vec![0u64; ka];
    let mut col_sums = vec![0u64; kb];
    for (i, row) in contingency.iter().enumerate() {
        for (j, &cell) in row.iter().enumerate() {
            sum_ij += choose2(cell);
            row_sums[i] += cell;
            col_sums[j] += cell;
        }
    }
    let sum_a: f64 = row_sums.iter().map(|&x| choose2(x)).sum();
    let sum_b: f64 = col_sums.iter().map(|&x| choose2(x)).sum();
    let total = choose2(n as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (sum_ij - expected) / (max_index - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// O(n^2) concordance oracle with half credit for ties.
    fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut concordant = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        concordant += 1.0;
                    } else if scores[i] == scores[j] {
                        concordant += 0.5;
                    }
                }
            }
        }
        concordant / pairs
    }

    /// Recomputes precision/recall from scratch at every distinct threshold.
    fn exhaustive_auprc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let total_pos = labels.iter().filter(|&&l| l).count() as f64;
        let mut prev_recall = 0.0;
        let mut area = 0.0;
        for &t in &thresholds {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|(&s, &l)| s >= t && l)
                .count() as f64;
            let fp = scores
                .iter()
                .zip(labels)
                .filter(|(&s, &l)| s >= t && !l)
                .count() as f64;
            let recall = tp / total_pos;
            let precision = tp / (tp + fp);
            area += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        area
    }

    #[test]
    fn auroc_fixture() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        assert_abs_diff_eq!(auroc(&scores, &labels).unwrap(), 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(
            auroc(&scores, &labels).unwrap(),
            pairwise_auroc(&scores, &labels),
            epsilon = 1e-12
        );
    }

    #[test]
    fn perfect_separation() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let labels = [false, false, true, true];
        assert_eq!(auroc(&scores, &labels).unwrap(), 1.0);
        assert_eq!(auprc(&scores, &labels).unwrap(), 1.0);
        assert_eq!(f1(&scores, &labels, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn all_tied_scores_give_half_auroc() {
        let scores = [0.5, 0.5, 0.5, 0.5];
        let labels = [true, false, true, false];
        assert_abs_diff_eq!(auroc(&scores, &labels).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            auroc(&[0.1, 0.9], &[true, true]),
            Err(MetricError::SingleClass)
        ));
        assert!(matches!(
            auprc(&[0.1, 0.9], &[false, false]),
            Err(MetricError::SingleClass)
        ));
    }

    #[test]
    fn agrees_with_brute_force_on_random_inputs() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(5..200);
            // Coarse grid so score ties actually occur.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64 / 20.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            assert_abs_diff_eq!(
                auroc(&scores, &labels).unwrap(),
                pairwise_auroc(&scores, &labels),
                epsilon = 1e-9
            );
            assert_abs_diff_eq!(
                auprc(&scores, &labels).unwrap(),
                exhaustive_auprc(&scores, &labels),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn ari_identical_and_independent() {
        let a = [0, 0, 1, 1, 2, 2];
        assert_eq!(adjusted_rand_index(&a, &a), 1.0);
        let relabeled = [1, 1, 2, 2, 0, 0];
        assert_eq!(adjusted_rand_index(&a, &relabeled), 1.0);
        let different = [0, 1, 0, 1, 0, 1];
        assert!(adjusted_rand_index(&a, &different) < 0.2);
    }
}
