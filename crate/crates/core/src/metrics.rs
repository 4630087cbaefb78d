//! Evaluation metrics shared by the estimators and the CLI.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};

/// Normalized reconstruction error `(L T)^-1 sum_t ||x_t - xhat_t||^2`.
pub fn nre(estimates: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimates.shape() != truth.shape() {
        return Err(mismatch("estimate and truth shapes differ"));
    }
    if truth.is_empty() {
        return Err(invalid("empty matrices"));
    }
    Ok((truth - estimates).norm_squared() / truth.len() as f64)
}

/// Normalized mean-square prediction error `mean_t ||d_t - dhat_t||^2 / ||d_t||^2`.
///
/// Slots with an empty prediction set or zero truth norm are skipped.
pub fn nmspe(predictions: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(mismatch("prediction and truth sequences differ in length"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, d) in predictions.iter().zip(truth) {
        if p.len() != d.len() {
            return Err(mismatch("prediction and truth vectors differ in length"));
        }
        let denom = d.norm_squared();
        if p.is_empty() || denom == 0.0 {
            continue;
        }
        sum += (d - p).norm_squared() / denom;
        count += 1;
    }
    if count == 0 {
        return Err(invalid("no slot has a nonempty, nonzero prediction target"));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC over `n_thresholds` levels spaced linearly on `[0, max |score|]`.
///
/// An entry is predicted positive iff `|score| > threshold`, except at
/// threshold zero where every entry is predicted positive so the curve always
/// contains `(1, 1)`. Points are returned in order of increasing threshold,
/// i.e. non-increasing rates.
pub fn roc_curve(scores: &DMatrix<f64>, truth: &DMatrix<f64>, n_thresholds: usize) -> Result<Vec<RocPoint>> {
    if scores.shape() != truth.shape() {
        return Err(mismatch("score and truth shapes differ"));
    }
    if n_thresholds < 2 {
        return Err(invalid("need at least two thresholds"));
    }
    let labels: Vec<bool> = truth.iter().map(|&v| v != 0.0).collect();
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 {
        return Err(invalid("truth has no anomalies, true-positive rate undefined"));
    }
    let mags: Vec<f64> = scores.iter().map(|v| v.abs()).collect();
    let top = mags.iter().cloned().fold(0.0, f64::max);

    // Sort once, then sweep thresholds with a moving cursor.
    let mut order: Vec<usize> = (0..mags.len()).collect();
    order.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]));
    let rate = |hits: usize, total: usize| if total == 0 { 0.0 } else { hits as f64 / total as f64 };

    let mut points = Vec::with_capacity(n_thresholds);
    points.push(RocPoint { threshold: 0.0, fpr: 1.0, tpr: 1.0 });
    for k in 1..n_thresholds {
        let theta = top * k as f64 / (n_thresholds - 1) as f64;
        let (mut tp, mut fp) = (0usize, 0usize);
        for &i in &order {
            if mags[i] <= theta {
                break;
            }
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push(RocPoint { threshold: theta, fpr: rate(fp, negatives), tpr: rate(tp, positives) });
    }
    Ok(points)
}

/// Trapezoidal area under an ROC curve, closed with the `(0, 0)` corner.
pub fn auc(points: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of `{|estimate| > threshold}` against `{truth != 0}`.
pub fn support_score(estimate: &DMatrix<f64>, truth: &DMatrix<f64>, threshold: f64) -> Result<SupportScore> {
    if estimate.shape() != truth.shape() {
        return Err(mismatch("estimate and truth shapes differ"));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (e, t) in estimate.iter().zip(truth.iter()) {
        match (e.abs() > threshold, *t != 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { if fn_ == 0 { 1.0 } else { 0.0 } } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(SupportScore { precision, recall, f1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nre_examples() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 0.5]);
        assert_eq!(nre(&x, &x).unwrap(), 0.0);
        let msq = x.norm_squared() / 4.0;
        assert!((nre(&DMatrix::zeros(2, 2), &x).unwrap() - msq).abs() < 1e-15);
        assert!((nre(&x, &(&x * 2.0)).unwrap() - msq).abs() < 1e-15);
        assert!(nre(&x, &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn nmspe_examples() {
        let d = vec![DVector::from_vec(vec![1.0, 1.0]), DVector::from_vec(vec![2.0, 0.0])];
        let p = vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![2.0, 0.0])];
        assert!((nmspe(&p, &d).unwrap() - 0.25).abs() < 1e-15);
        assert!(nmspe(&p[..1], &d).is_err());
    }

    #[test]
    fn perfect_scores_reach_corner() {
        let truth = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, -2.0, 0.0, 0.0]);
        let roc = roc_curve(&truth, &truth, 50).unwrap();
        assert_eq!(roc[0], RocPoint { threshold: 0.0, fpr: 1.0, tpr: 1.0 });
        assert!(roc.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert!((auc(&roc) - 1.0).abs() < 1e-12);
        assert!(roc.windows(2).all(|w| w[1].fpr <= w[0].fpr && w[1].tpr <= w[0].tpr));
    }

    #[test]
    fn roc_rejects_all_zero_truth() {
        let z = DMatrix::zeros(2, 2);
        assert!(roc_curve(&z, &z, 10).is_err());
    }

    #[test]
    fn random_scores_are_near_diagonal() {
        use rand::{Rng, SeedableRng};
        let mut aucs = 0.0;
        for seed in 0..10 {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let truth = DMatrix::from_fn(40, 50, |_, _| if r.random::<f64>() < 0.1 { 1.0 } else { 0.0 });
            let scores = DMatrix::from_fn(40, 50, |_, _| r.random::<f64>());
            let a = auc(&roc_curve(&scores, &truth, 200).unwrap());
            assert!((0.4..=0.6).contains(&a), "{a}");
            aucs += a;
        }
        assert!((aucs / 10.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn support_score_counts() {
        let truth = DMatrix::from_row_slice(1, 4, &[1.0, 1.0, 0.0, 0.0]);
        let est = DMatrix::from_row_slice(1, 4, &[0.5, 0.0, 0.3, 0.0]);
        let s = support_score(&est, &truth, 0.0).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
        assert_eq!(support_score(&truth, &truth, 0.0).unwrap().f1, 1.0);
    }
}
