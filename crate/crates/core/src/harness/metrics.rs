//! Clustering agreement and ranking metrics.

use std::collections::HashMap;

use crate::error::{Error, Result};

fn choose2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as u64;
    if n < 2 {
        return 1.0;
    }
    let mut joint: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = joint.values().map(|&v| choose2(v)).sum();
    let sum_rows: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_cols: f64 = cols.values().map(|&v| choose2(v)).sum();
    let expected = sum_rows * sum_cols / choose2(n);
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        // both labelings put everything in one cluster, or all singletons
        return 1.0;
    }
    (index - expected) / (max - expected)
}

fn check_classes(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc(format!(
            "{pos} positive and {neg} negative windows"
        )));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve, from tie-averaged ranks.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let (pos, neg) = check_classes(labels)?;
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let pos_f = pos as f64;
    Ok((rank_sum - pos_f * (pos_f + 1.0) / 2.0) / (pos_f * neg as f64))
}

/// 1-based ranks in ascending score order; tied scores share their mean rank.
pub fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the precision-recall curve by trapezoidal integration, with
/// one operating point per distinct score and the curve anchored at
/// (recall 0, precision 1).
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let (pos, _) = check_classes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_r, mut prev_p) = (0.0, 1.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let r = tp as f64 / pos as f64;
        let p = tp as f64 / (tp + fp) as f64;
        area += (r - prev_r) * (p + prev_p) / 2.0;
        prev_r = r;
        prev_p = p;
    }
    Ok(area)
}

/// A window is anomalous when it holds more than `threshold` anomalous records.
pub fn label_windows(anomalous_counts: &[usize], threshold: usize) -> Vec<bool> {
    anomalous_counts.iter().map(|&c| c > threshold).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Fraction of (positive, negative) pairs ordered correctly, ties half.
    fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut good = 0.0;
        let mut total = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    total += 1.0;
                    if scores[i] > scores[j] {
                        good += 1.0;
                    } else if scores[i] == scores[j] {
                        good += 0.5;
                    }
                }
            }
        }
        good / total
    }

    #[test]
    fn perfect_separation() {
        let scores = [0.1, 0.2, 0.3, 0.9, 0.95];
        let labels = [false, false, false, true, true];
        assert_eq!(auc_roc(&scores, &labels).unwrap(), 1.0);
        assert_eq!(auc_pr(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn single_swapped_pair() {
        let scores: Vec<f64> = (0..10).map(f64::from).collect();
        // top five positive except ranks 5 and 4 swapped
        let labels = [false, false, false, false, true, false, true, true, true, true];
        assert!((auc_roc(&scores, &labels).unwrap() - 0.96).abs() < 1e-12);
    }

    #[test]
    fn rank_auc_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(2..60);
            // coarse scores force ties
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8))).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let a = auc_roc(&scores, &labels).unwrap();
            let b = pair_count_auc(&scores, &labels);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_scores_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let scores: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..200).map(|i| i % 4 == 0).collect();
        let a = auc_roc(&scores, &labels).unwrap();
        assert!((a - 0.5).abs() < 0.1, "{a}");
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            auc_roc(&[1.0, 2.0], &[true, true]),
            Err(Error::UndefinedAuc(_))
        ));
        assert!(matches!(
            auc_pr(&[1.0, 2.0], &[false, false]),
            Err(Error::UndefinedAuc(_))
        ));
    }

    #[test]
    fn pr_with_ties_and_misses() {
        // ranking: + - + -, trapezoids from (0,1): (0.5,1), (0.5,0.5), (1,2/3), (1,0.5)
        let scores = [4.0, 3.0, 2.0, 1.0];
        let labels = [true, false, true, false];
        let expect = 0.5 * (1.0 + 1.0) / 2.0 + 0.5 * (0.5 + 2.0 / 3.0) / 2.0;
        assert!((auc_pr(&scores, &labels).unwrap() - expect).abs() < 1e-12);
        // all tied: one point at (1, 0.5)
        let tied = auc_pr(&[1.0; 4], &labels).unwrap();
        assert!((tied - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rand_index_cases() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[5, 5, 5]), 1.0);
        // classic example with a known value
        let a = [0, 0, 0, 1, 1, 1];
        let b = [0, 0, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &b) - 0.242_424_242_424_242_4).abs() < 1e-12);
    }

    #[test]
    fn window_labels() {
        assert_eq!(label_windows(&[0, 100, 101], 100), vec![false, false, true]);
    }
}
