//! Ground-truth posteriors for synthetic cohorts.
//!
//! Features are noisy nonlinear maps of the latent state, so `p(z, d | x)` has
//! no closed form. It is estimated by self-normalised importance sampling with
//! the generative prior as proposal, stratified over diagnoses.

use serde::{Deserialize, Serialize};

use super::generate::GenerativeModel;
use super::DiagnosisId;
use crate::error::{Error, Result};
use crate::math::{self, sigmoid};

/// Default number of importance draws.
pub const DEFAULT_DRAWS: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEstimate {
    /// `p(d | x)` over diagnosis ids `0..n_diagnoses`.
    pub diagnosis_posterior: Vec<f64>,
    /// `E[sigmoid(w . z + beta_d) | x, d]`; NaN where a diagnosis received no weight.
    pub conditional_risk: Vec<f64>,
    /// `p(y = 1 | x)`.
    pub marginal_risk: f64,
    pub effective_sample_size: f64,
}

/// Importance-sampling estimate of the diagnosis posterior and risks given features.
pub fn posterior_given_features(
    model: &GenerativeModel,
    features: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<PosteriorEstimate> {
    let spec = &model.spec;
    if features.len() != spec.n_features {
        return Err(Error::DimensionMismatch {
            expected: spec.n_features,
            got: features.len(),
        });
    }
    let sd = spec.feature_noise_sd;
    if sd <= 0.0 {
        return Err(Error::InvalidInput(
            "importance sampling needs feature_noise_sd > 0".into(),
        ));
    }
    let k = spec.n_diagnoses;
    let per = (n_draws / k).max(1);
    let mut rng = math::rng(seed, 7);
    let inv_var = 1.0 / (sd * sd);

    let mut log_w = Vec::with_capacity(per * k);
    let mut risk = Vec::with_capacity(per * k);
    let mut owner = Vec::with_capacity(per * k);
    for d in 0..k {
        let prior = model.prior[d];
        if prior <= 0.0 {
            continue;
        }
        let id = DiagnosisId(d as u32);
        let base = prior.ln() - (per as f64).ln();
        for _ in 0..per {
            let z = model.sample_latent(id, &mut rng);
            let fx = model.feature_map.apply(&z);
            let sq: f64 = fx.iter().zip(features).map(|(a, b)| (a - b) * (a - b)).sum();
            log_w.push(base - 0.5 * sq * inv_var);
            risk.push(sigmoid(model.risk_score(&z, id)));
            owner.push(d);
        }
    }
    let lse = math::log_sum_exp(&log_w);
    let w: Vec<f64> = log_w.iter().map(|l| (l - lse).exp()).collect();

    let mut post = vec![0.0; k];
    let mut cond = vec![0.0; k];
    for ((&wi, &ri), &d) in w.iter().zip(&risk).zip(&owner) {
        post[d] += wi;
        cond[d] += wi * ri;
    }
    for d in 0..k {
        cond[d] = if post[d] > 0.0 { cond[d] / post[d] } else { f64::NAN };
    }
    let marginal = w.iter().zip(&risk).map(|(a, b)| a * b).sum();
    let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    Ok(PosteriorEstimate {
        diagnosis_posterior: post,
        conditional_risk: cond,
        marginal_risk: marginal,
        effective_sample_size: ess,
    })
}
