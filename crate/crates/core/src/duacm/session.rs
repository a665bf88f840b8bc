use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{conditional_risks, mixture, DuConfig, RiskDistribution};
use crate::cohort::DiagnosisId;
use crate::diagmodel::{DiagnosisDistribution, DiagnosisModel};
use crate::error::{Error, Result};
use crate::gam::GamModel;

/// Interactive what-if state for one patient.
///
/// The posterior and per-diagnosis risks are computed once when the session
/// opens, so later updates need no access to the models. Excluding a
/// diagnosis sets its posterior probability to zero and renormalises the
/// rest; confirming one excludes all others. Failed operations leave the
/// session unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleOutSession {
    pub features: Vec<f64>,
    pub base: DiagnosisDistribution,
    pub conditional_risks: Vec<f64>,
    pub unseen_diagnoses: Vec<DiagnosisId>,
    pub excluded: BTreeSet<DiagnosisId>,
    pub confirmed: Option<DiagnosisId>,
    pub config: DuConfig,
    pub current: RiskDistribution,
}

impl RuleOutSession {
    pub fn open(outcome_model: &GamModel, diag_model: &DiagnosisModel, features: &[f64], config: &DuConfig) -> Result<Self> {
        let (base, risks, unseen) = conditional_risks(outcome_model, diag_model, features)?;
        let current = mixture(&base, &risks, config, unseen.clone())?;
        Ok(RuleOutSession {
            features: features.to_vec(),
            base,
            conditional_risks: risks,
            unseen_diagnoses: unseen,
            excluded: BTreeSet::new(),
            confirmed: None,
            config: config.clone(),
            current,
        })
    }

    fn index(&self, d: DiagnosisId) -> Result<usize> {
        self.base.vocab.iter().position(|&v| v == d).ok_or(Error::UnknownDiagnosis(d))
    }

    /// Posterior after applying `excluded` and `confirmed`, or `None` when no
    /// probability mass remains.
    fn posterior_for(&self, excluded: &BTreeSet<DiagnosisId>, confirmed: Option<DiagnosisId>) -> Option<DiagnosisDistribution> {
        let masked: Vec<f64> = self
            .base
            .vocab
            .iter()
            .zip(&self.base.probabilities)
            .map(|(d, &p)| {
                let allowed = !excluded.contains(d) && confirmed.is_none_or(|c| c == *d);
                if allowed {
                    p
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = masked.iter().sum();
        (total > 0.0).then(|| DiagnosisDistribution {
            vocab: self.base.vocab.clone(),
            probabilities: masked.into_iter().map(|p| p / total).collect(),
        })
    }

    /// Current posterior over the vocabulary.
    pub fn posterior(&self) -> DiagnosisDistribution {
        self.posterior_for(&self.excluded, self.confirmed)
            .expect("session state always keeps positive mass")
    }

    fn apply(&mut self, excluded: BTreeSet<DiagnosisId>, confirmed: Option<DiagnosisId>) -> Result<&RiskDistribution> {
        let posterior = self
            .posterior_for(&excluded, confirmed)
            .ok_or_else(|| Error::ExcludesAll(excluded.iter().copied().collect()))?;
        let current = mixture(&posterior, &self.conditional_risks, &self.config, self.unseen_diagnoses.clone())?;
        self.excluded = excluded;
        self.confirmed = confirmed;
        self.current = current;
        Ok(&self.current)
    }

    pub fn rule_out(&mut self, diagnoses: &[DiagnosisId]) -> Result<&RiskDistribution> {
        for &d in diagnoses {
            self.index(d)?;
        }
        let mut excluded = self.excluded.clone();
        excluded.extend(diagnoses.iter().copied());
        self.apply(excluded, self.confirmed)
    }

    pub fn confirm(&mut self, diagnosis: DiagnosisId) -> Result<&RiskDistribution> {
        self.index(diagnosis)?;
        if self.excluded.contains(&diagnosis) {
            return Err(Error::ConfirmExcluded(diagnosis));
        }
        if let Some(c) = self.confirmed.filter(|&c| c != diagnosis) {
            let mut all: BTreeSet<DiagnosisId> = self.excluded.clone();
            all.insert(c);
            all.insert(diagnosis);
            return Err(Error::ExcludesAll(all.into_iter().collect()));
        }
        self.apply(self.excluded.clone(), Some(diagnosis))
    }

    pub fn reset(&mut self) -> &RiskDistribution {
        self.apply(BTreeSet::new(), None)
            .expect("the unrestricted posterior has positive mass");
        &self.current
    }
}
