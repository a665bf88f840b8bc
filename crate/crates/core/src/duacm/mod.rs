//! Risk under diagnosis uncertainty.
//!
//! The outcome model gives a risk `f(x, d)` per diagnosis and the diagnosis
//! model a posterior `g(d | x)`. [`du_predict`] combines them into the
//! distribution of risk over diagnoses, either by sampling diagnoses from the
//! posterior (the default, 150 draws) or by enumerating the vocabulary
//! exactly. [`RuleOutSession`] updates that distribution as diagnoses are
//! excluded or confirmed.

mod session;

use serde::{Deserialize, Serialize};

use crate::cohort::DiagnosisId;
use crate::diagmodel::{sample_diagnoses, DiagnosisDistribution, DiagnosisModel};
use crate::error::{Error, Result};
use crate::gam::GamModel;

pub use session::RuleOutSession;

/// Tolerance when comparing cumulative weight against a quantile level.
const QUANTILE_TOL: f64 = 1e-12;
pub const DEFAULT_DRIVER_THRESHOLD: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    #[default]
    Sampled,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DuConfig {
    pub mode: InferenceMode,
    pub n_samples: usize,
    pub quantiles: Vec<f64>,
    pub seed: u64,
}

impl Default for DuConfig {
    fn default() -> Self {
        DuConfig {
            mode: InferenceMode::Sampled,
            n_samples: 150,
            quantiles: vec![0.5, 0.9],
            seed: 0,
        }
    }
}

impl DuConfig {
    pub fn exact() -> Self {
        DuConfig {
            mode: InferenceMode::Exact,
            ..DuConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.mode == InferenceMode::Sampled && self.n_samples == 0 {
            return Err(Error::invalid("n_samples", "must be at least 1"));
        }
        if self.quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::invalid("quantiles", "levels must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEntry {
    pub diagnosis: DiagnosisId,
    pub weight: f64,
    pub conditional_risk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskDistribution {
    pub mode: InferenceMode,
    /// Diagnoses with positive weight, in vocabulary order.
    pub entries: Vec<RiskEntry>,
    pub mean: f64,
    /// `(level, value)` pairs in the order the levels were requested.
    pub quantiles: Vec<(f64, f64)>,
    /// Number of draws in sampled mode.
    pub n_samples: Option<usize>,
    pub seed: u64,
    /// Vocabulary diagnoses the outcome model had no offset for (risk uses `beta = 0`).
    pub unseen_diagnoses: Vec<DiagnosisId>,
}

impl RiskDistribution {
    /// Weighted lower quantile: the smallest risk whose cumulative weight reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        weighted_lower_quantile(&self.entries, q)
    }

    pub fn stored_quantile(&self, q: f64) -> Option<f64> {
        self.quantiles.iter().find(|(l, _)| (l - q).abs() < 1e-12).map(|(_, v)| *v)
    }

    pub fn min_risk(&self) -> f64 {
        self.entries.iter().map(|e| e.conditional_risk).fold(f64::INFINITY, f64::min)
    }

    pub fn max_risk(&self) -> f64 {
        self.entries.iter().map(|e| e.conditional_risk).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Weighted standard deviation of the conditional risks.
    pub fn risk_sd(&self) -> f64 {
        let var: f64 = self
            .entries
            .iter()
            .map(|e| e.weight * (e.conditional_risk - self.mean).powi(2))
            .sum();
        var.max(0.0).sqrt()
    }

    pub(crate) fn from_entries(
        mode: InferenceMode,
        entries: Vec<RiskEntry>,
        config: &DuConfig,
        unseen_diagnoses: Vec<DiagnosisId>,
    ) -> Self {
        let mean = entries.iter().map(|e| e.weight * e.conditional_risk).sum();
        let quantiles = config
            .quantiles
            .iter()
            .map(|&q| (q, weighted_lower_quantile(&entries, q)))
            .collect();
        RiskDistribution {
            mode,
            entries,
            mean,
            quantiles,
            n_samples: (mode == InferenceMode::Sampled).then_some(config.n_samples),
            seed: config.seed,
            unseen_diagnoses,
        }
    }
}

fn weighted_lower_quantile(entries: &[RiskEntry], q: f64) -> f64 {
    let mut sorted: Vec<&RiskEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| {
        a.conditional_risk
            .total_cmp(&b.conditional_risk)
            .then(a.diagnosis.cmp(&b.diagnosis))
    });
    let mut cum = 0.0;
    for e in &sorted {
        cum += e.weight;
        if cum >= q - QUANTILE_TOL {
            return e.conditional_risk;
        }
    }
    sorted.last().map_or(f64::NAN, |e| e.conditional_risk)
}

/// Per-diagnosis risks `f(x, d)` over the diagnosis model's vocabulary, plus
/// the posterior `g(d | x)` and the diagnoses that fell back to `beta = 0`.
pub fn conditional_risks(
    outcome_model: &GamModel,
    diag_model: &DiagnosisModel,
    features: &[f64],
) -> Result<(DiagnosisDistribution, Vec<f64>, Vec<DiagnosisId>)> {
    let vocab = diag_model.vocab_ids();
    if !outcome_model.diagnosis_vocab.is_empty() && outcome_model.diagnosis_vocab != vocab {
        return Err(Error::Schema(
            "outcome and diagnosis models were trained on different diagnosis vocabularies".into(),
        ));
    }
    if outcome_model.n_features() != diag_model.n_features() {
        return Err(Error::Schema(format!(
            "outcome model expects {} features, diagnosis model {}",
            outcome_model.n_features(),
            diag_model.n_features()
        )));
    }
    let base = outcome_model.feature_score(features)?;
    let posterior = diag_model.predict(features)?;
    let mut unseen = Vec::new();
    let risks = vocab
        .iter()
        .map(|&d| {
            let p = outcome_model.predict_from_feature_score(base, Some(d));
            if p.unseen_diagnosis {
                unseen.push(d);
            }
            p.probability
        })
        .collect();
    Ok((posterior, risks, unseen))
}

/// Risk distribution for a posterior over diagnoses with known per-diagnosis risks.
pub(crate) fn mixture(
    posterior: &DiagnosisDistribution,
    risks: &[f64],
    config: &DuConfig,
    unseen: Vec<DiagnosisId>,
) -> Result<RiskDistribution> {
    config.validate()?;
    let entries: Vec<RiskEntry> = match config.mode {
        InferenceMode::Exact => posterior
            .vocab
            .iter()
            .zip(&posterior.probabilities)
            .zip(risks)
            .filter(|((_, &p), _)| p > 0.0)
            .map(|((&diagnosis, &weight), &conditional_risk)| RiskEntry {
                diagnosis,
                weight,
                conditional_risk,
            })
            .collect(),
        InferenceMode::Sampled => {
            let draws = sample_diagnoses(posterior, config.n_samples, config.seed)?;
            let mut counts = vec![0usize; posterior.vocab.len()];
            for d in draws {
                let i = posterior.vocab.iter().position(|&v| v == d).expect("drawn from vocab");
                counts[i] += 1;
            }
            let n = config.n_samples as f64;
            posterior
                .vocab
                .iter()
                .zip(&counts)
                .zip(risks)
                .filter(|((_, &c), _)| c > 0)
                .map(|((&diagnosis, &c), &conditional_risk)| RiskEntry {
                    diagnosis,
                    weight: c as f64 / n,
                    conditional_risk,
                })
                .collect()
        }
    };
    Ok(RiskDistribution::from_entries(config.mode, entries, config, unseen))
}

/// Distribution of outcome risk over the diagnoses compatible with `features`.
pub fn du_predict(
    outcome_model: &GamModel,
    diag_model: &DiagnosisModel,
    features: &[f64],
    config: &DuConfig,
) -> Result<RiskDistribution> {
    let (posterior, risks, unseen) = conditional_risks(outcome_model, diag_model, features)?;
    mixture(&posterior, &risks, config, unseen)
}

/// `Q90 - mean`.
pub fn pessimistic_delta(dist: &RiskDistribution) -> Result<f64> {
    let q90 = dist
        .stored_quantile(0.9)
        .ok_or_else(|| Error::InvalidInput("distribution has no 0.9 quantile".into()))?;
    Ok(q90 - dist.mean)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationEntry {
    pub diagnosis: DiagnosisId,
    pub probability: f64,
    pub conditional_risk: f64,
    pub risk_driver: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// Most probable diagnoses first.
    pub ranked: Vec<ExplanationEntry>,
    /// Ranked diagnoses with risk at or above Q90 and probability at or above the threshold.
    pub risk_drivers: Vec<DiagnosisId>,
    pub q90: f64,
}

pub fn explain(dist: &RiskDistribution, top_k: usize, driver_threshold: f64) -> Explanation {
    let q90 = dist.stored_quantile(0.9).unwrap_or_else(|| dist.quantile(0.9));
    let mut sorted: Vec<&RiskEntry> = dist.entries.iter().collect();
    sorted.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.diagnosis.cmp(&b.diagnosis)));
    let ranked: Vec<ExplanationEntry> = sorted
        .into_iter()
        .take(top_k)
        .map(|e| ExplanationEntry {
            diagnosis: e.diagnosis,
            probability: e.weight,
            conditional_risk: e.conditional_risk,
            risk_driver: e.conditional_risk >= q90 && e.weight >= driver_threshold,
        })
        .collect();
    let risk_drivers = ranked.iter().filter(|e| e.risk_driver).map(|e| e.diagnosis).collect();
    Explanation {
        ranked,
        risk_drivers,
        q90,
    }
}
