use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::math::{self, mid_ranks, sigmoid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    pub auc: f64,
    /// Hanley-McNeil standard error.
    pub standard_error: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((n_pos, n_neg))
}

/// Area under the ROC curve as the normalised Mann-Whitney U statistic
/// (ties count one half), computed from mid-ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<AucResult> {
    let (n_pos, n_neg) = check_scores(scores, labels)?;
    let ranks = mid_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let u = rank_sum - np * (np + 1.0) / 2.0;
    let a = (u / (np * nn)).clamp(0.0, 1.0);
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    let var = (a * (1.0 - a) + (np - 1.0) * (q1 - a * a) + (nn - 1.0) * (q2 - a * a)) / (np * nn);
    Ok(AucResult {
        auc: a,
        standard_error: var.max(0.0).sqrt(),
        n_pos,
        n_neg,
    })
}

/// `sqrt(se_a^2 + se_b^2)`, for comparing AUCs from independent samples.
pub fn combined_se(a: &AucResult, b: &AucResult) -> f64 {
    a.standard_error.hypot(b.standard_error)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub mean_predicted: f64,
    pub observed_rate: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    /// Intercept `a` of `y ~ Bernoulli(sigmoid(logit(score) + a))`.
    pub intercept: f64,
    pub standard_error: f64,
    pub p_value: f64,
}

/// Scores are clamped this far from 0 and 1 before taking logits.
const SCORE_EPS: f64 = 1e-12;

/// Two-sided normal p-value for a z statistic.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Reliability bins over equal-frequency score bins and the fixed-slope
/// logistic recalibration intercept with its Wald test.
pub fn calibration_report(scores: &[f64], labels: &[bool], n_bins: usize) -> Result<CalibrationReport> {
    check_scores(scores, labels)?;
    if n_bins < 2 {
        return Err(Error::invalid("n_bins", "must be at least 2"));
    }
    if scores.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::InvalidInput("scores must lie in [0, 1]".into()));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let bins = (0..n_bins)
        .filter_map(|k| {
            let (lo, hi) = (k * n / n_bins, (k + 1) * n / n_bins);
            if lo == hi {
                return None;
            }
            let idx = &order[lo..hi];
            let c = idx.len() as f64;
            Some(CalibrationBin {
                mean_predicted: idx.iter().map(|&i| scores[i]).sum::<f64>() / c,
                observed_rate: idx.iter().filter(|&&i| labels[i]).count() as f64 / c,
                count: idx.len(),
            })
        })
        .collect();

    let offsets: Vec<f64> = scores
        .iter()
        .map(|&s| math::logit(s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)))
        .collect();
    let observed = labels.iter().filter(|&&l| l).count() as f64;
    let mut a = 0.0;
    let mut info = 0.0;
    for _ in 0..100 {
        let (mut expected, mut h) = (0.0, 0.0);
        for &o in &offsets {
            let p = sigmoid(o + a);
            expected += p;
            h += p * (1.0 - p);
        }
        info = h;
        if h <= 0.0 {
            break;
        }
        let step = ((observed - expected) / h).clamp(-5.0, 5.0);
        a += step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    let standard_error = if info > 0.0 { 1.0 / info.sqrt() } else { f64::INFINITY };
    Ok(CalibrationReport {
        bins,
        intercept: a,
        standard_error,
        p_value: two_sided_p(a / standard_error),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    /// Indices (into the input) of rejected hypotheses, ascending.
    pub rejected: Vec<usize>,
    /// Benjamini-Hochberg adjusted p-values in input order.
    pub adjusted: Vec<f64>,
}

/// Benjamini-Hochberg step-up procedure at FDR level `alpha`.
pub fn bh_adjust(p_values: &[f64], alpha: f64) -> BhResult {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut n_reject = 0;
    for (k, &i) in order.iter().enumerate() {
        if p_values[i] <= (k + 1) as f64 * alpha / m as f64 {
            n_reject = k + 1;
        }
    }
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0_f64;
    for (k, &i) in order.iter().enumerate().rev() {
        running = running.min(p_values[i] * m as f64 / (k + 1) as f64);
        adjusted[i] = running;
    }
    let mut rejected: Vec<usize> = order[..n_reject].to_vec();
    rejected.sort_unstable();
    BhResult { rejected, adjusted }
}

/// Spearman rank correlation: Pearson correlation of mid-ranks.
pub fn spearman_corr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 3 {
        return Err(Error::InvalidInput("spearman correlation needs at least 3 points".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("spearman input"));
    }
    pearson(&mid_ranks(a), &mid_ranks(b))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidInput("correlation of a constant input is undefined".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_trivial_cases() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]).unwrap().auc, 1.0);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap().auc, 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
    }

    #[test]
    fn bh_reference_example() {
        let p = [0.001, 0.008, 0.039, 0.041, 0.042, 0.06, 0.074, 0.205, 0.212, 0.216];
        // Thresholds are 0.005k; only p(1) and p(2) fall under theirs.
        assert_eq!(bh_adjust(&p, 0.05).rejected, vec![0, 1]);
        assert!(bh_adjust(&[1.0; 4], 0.05).rejected.is_empty());
        assert_eq!(bh_adjust(&[0.05], 0.05).rejected, vec![0]);
        assert!(bh_adjust(&[0.051], 0.05).rejected.is_empty());
    }

    #[test]
    fn spearman_extremes() {
        let a = [3.0, 1.0, 4.0, 1.5, 9.0];
        assert!((spearman_corr(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((spearman_corr(&a, &b).unwrap() + 1.0).abs() < 1e-15);
        assert!(spearman_corr(&a, &[1.0; 5]).is_err());
    }

    #[test]
    fn constant_half_scores_are_calibrated() {
        let labels: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let r = calibration_report(&[0.5; 100], &labels, 10).unwrap();
        assert!(r.intercept.abs() < 1e-12);
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 100);
        assert!(r.bins.iter().all(|b| b.observed_rate == 0.5));
        assert!(calibration_report(&[1.5, 0.2], &[true, false], 2).is_err());
    }
}
