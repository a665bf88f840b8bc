//! L2-regularised logistic regression with cross-validated penalty.
//!
//! The objective on standardised features is
//! `mean log-loss + (lambda / 2) * |w|^2`, intercept unpenalised, minimised by
//! damped Newton iterations.

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::math::{self, log_loss_from_score, sigmoid, Standardization};

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda: f64,
    pub mean_log_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Weights on the standardised scale.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub standardization: Standardization,
    pub cv_table: Vec<CvPoint>,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: features.len(),
            });
        }
        let x = self.standardization.apply(features);
        Ok(self.intercept + math::dot(&self.weights, &x))
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        self.score(features).map(sigmoid)
    }

    /// Weights on the original feature scale.
    pub fn raw_weights(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.standardization.sd)
            .map(|(w, s)| w / s)
            .collect()
    }
}

/// Standardised design plus labels.
struct Design {
    x: Vec<Vec<f64>>,
    y: Vec<bool>,
}

fn objective(d: &Design, w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = d.y.len() as f64;
    let loss: f64 = d
        .x
        .iter()
        .zip(&d.y)
        .map(|(x, &y)| log_loss_from_score(b + math::dot(w, x), y))
        .sum();
    loss / n + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
}

/// Gradient `[d/dw..., d/db]` of the penalised objective.
fn gradient(d: &Design, w: &[f64], b: f64, lambda: f64) -> Vec<f64> {
    let p = w.len();
    let n = d.y.len() as f64;
    let mut g = vec![0.0; p + 1];
    for (x, &y) in d.x.iter().zip(&d.y) {
        let r = sigmoid(b + math::dot(w, x)) - y as u8 as f64;
        for j in 0..p {
            g[j] += r * x[j];
        }
        g[p] += r;
    }
    for j in 0..p {
        g[j] = g[j] / n + lambda * w[j];
    }
    g[p] /= n;
    g
}

fn hessian(d: &Design, w: &[f64], b: f64, lambda: f64) -> Vec<f64> {
    let p = w.len();
    let m = p + 1;
    let n = d.y.len() as f64;
    let mut h = vec![0.0; m * m];
    let mut xe = vec![0.0; m];
    for x in &d.x {
        let s = sigmoid(b + math::dot(w, x));
        let v = s * (1.0 - s);
        xe[..p].copy_from_slice(x);
        xe[p] = 1.0;
        for i in 0..m {
            let vi = v * xe[i];
            for j in 0..=i {
                h[i * m + j] += vi * xe[j];
            }
        }
    }
    for i in 0..m {
        for j in 0..=i {
            h[i * m + j] /= n;
            h[j * m + i] = h[i * m + j];
        }
    }
    for j in 0..p {
        h[j * m + j] += lambda;
    }
    h
}

/// Newton's method with backtracking; returns `(weights, intercept)`.
fn solve(d: &Design, lambda: f64) -> (Vec<f64>, f64) {
    let p = d.x.first().map_or(0, |x| x.len());
    let base = d.y.iter().filter(|&&y| y).count() as f64 / d.y.len() as f64;
    let mut w = vec![0.0; p];
    let mut b = math::logit(base.clamp(1e-12, 1.0 - 1e-12));
    let mut f = objective(d, &w, b, lambda);
    for _ in 0..MAX_ITER {
        let g = gradient(d, &w, b, lambda);
        if g.iter().all(|v| v.abs() < GRAD_TOL) {
            break;
        }
        let mut h = hessian(d, &w, b, lambda);
        let mut jitter = 1e-12;
        let step = loop {
            if let Some(s) = math::cholesky_solve(&h, &g, p + 1) {
                break s;
            }
            for i in 0..=p {
                h[i * (p + 1) + i] += jitter;
            }
            jitter *= 10.0;
        };
        let mut t = 1.0;
        loop {
            let w_new: Vec<f64> = w.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            let b_new = b - t * step[p];
            let f_new = objective(d, &w_new, b_new, lambda);
            if f_new <= f || t < 1e-10 {
                w = w_new;
                b = b_new;
                f = f_new;
                break;
            }
            t *= 0.5;
        }
    }
    (w, b)
}

fn design(cohort: &Cohort, idx: &[usize], st: &Standardization) -> Design {
    Design {
        x: idx.iter().map(|&i| st.apply(&cohort.records[i].features)).collect(),
        y: idx.iter().map(|&i| cohort.records[i].outcome).collect(),
    }
}

fn fit_at(cohort: &Cohort, idx: &[usize], lambda: f64) -> (Standardization, Vec<f64>, f64) {
    let st = Standardization::fit(
        cohort.n_features(),
        idx.iter().map(|&i| cohort.records[i].features.as_slice()),
    );
    let d = design(cohort, idx, &st);
    let (w, b) = solve(&d, lambda);
    (st, w, b)
}

/// Fits at a fixed penalty without cross-validation.
pub fn fit_logistic_fixed(train: &Cohort, lambda: f64) -> Result<LinearModel> {
    check_training_data(train, 1)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid("lambda", "must be positive"));
    }
    let idx: Vec<usize> = (0..train.len()).collect();
    let (standardization, weights, intercept) = fit_at(train, &idx, lambda);
    Ok(LinearModel {
        weights,
        intercept,
        lambda,
        standardization,
        cv_table: Vec::new(),
    })
}

fn check_training_data(train: &Cohort, n_folds: usize) -> Result<()> {
    train.check_finite()?;
    let pos = train.records.iter().filter(|r| r.outcome).count();
    let neg = train.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    if pos < n_folds || neg < n_folds {
        return Err(Error::InvalidInput(format!(
            "need at least {n_folds} records of each outcome, got {pos} positive and {neg} negative"
        )));
    }
    Ok(())
}

/// Chooses `lambda` from `lambda_grid` by stratified k-fold log-loss (ties go
/// to the larger penalty) and refits on all of `train`.
pub fn fit_logistic(train: &Cohort, lambda_grid: &[f64], n_folds: usize, seed: u64) -> Result<LinearModel> {
    if lambda_grid.is_empty() {
        return Err(Error::invalid("lambda_grid", "must not be empty"));
    }
    if lambda_grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::invalid("lambda_grid", "values must be positive"));
    }
    if n_folds < 2 {
        return Err(Error::invalid("n_folds", "must be at least 2"));
    }
    check_training_data(train, n_folds)?;

    let mut rng = math::rng(seed, 0);
    let mut fold_of = vec![0usize; train.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..train.len()).filter(|&i| train.records[i].outcome == class).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold_of[i] = pos % n_folds;
        }
    }

    let mut cv_table: Vec<CvPoint> = lambda_grid
        .iter()
        .map(|&lambda| CvPoint { lambda, mean_log_loss: 0.0 })
        .collect();
    for k in 0..n_folds {
        let fit_idx: Vec<usize> = (0..train.len()).filter(|&i| fold_of[i] != k).collect();
        let held: Vec<usize> = (0..train.len()).filter(|&i| fold_of[i] == k).collect();
        for point in cv_table.iter_mut() {
            let (st, w, b) = fit_at(train, &fit_idx, point.lambda);
            let d = design(train, &held, &st);
            let loss: f64 = d
                .x
                .iter()
                .zip(&d.y)
                .map(|(x, &y)| log_loss_from_score(b + math::dot(&w, x), y))
                .sum::<f64>()
                / held.len() as f64;
            point.mean_log_loss += loss / n_folds as f64;
        }
    }

    let best = cv_table
        .iter()
        .min_by(|a, b| {
            a.mean_log_loss
                .total_cmp(&b.mean_log_loss)
                .then(b.lambda.total_cmp(&a.lambda))
        })
        .expect("non-empty grid");
    let lambda = best.lambda;
    let idx: Vec<usize> = (0..train.len()).collect();
    let (standardization, weights, intercept) = fit_at(train, &idx, lambda);
    Ok(LinearModel {
        weights,
        intercept,
        lambda,
        standardization,
        cv_table,
    })
}

/// Gradient max-norm of the penalised objective at the model's parameters on `train`.
pub fn optimality_gap(model: &LinearModel, train: &Cohort) -> f64 {
    let idx: Vec<usize> = (0..train.len()).collect();
    let d = design(train, &idx, &model.standardization);
    gradient(&d, &model.weights, model.intercept, model.lambda)
        .into_iter()
        .fold(0.0, |m, v| m.max(v.abs()))
}
