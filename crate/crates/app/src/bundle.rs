//! Trained outcome and diagnosis models with the schema they were fit on.

use std::path::Path;

use duacm_core::cohort::{write_cohort, Diagnosis, FeatureSchema};
use duacm_core::{Cohort, DiagnosisModel, GamModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SplitSpec};
use crate::error::{AppError, Result};
use crate::output::write_atomic;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the resolved run config.
    pub config_hash: String,
    /// SHA-256 of the training cohort in its file format.
    pub data_fingerprint: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_valid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub schema: FeatureSchema,
    pub diagnosis_vocab: Vec<Diagnosis>,
    pub outcome_model: GamModel,
    pub diagnosis_model: DiagnosisModel,
    pub split: SplitSpec,
    pub provenance: Provenance,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn config_hash(config: &RunConfig) -> String {
    sha256_hex(serde_json::to_string(config).expect("config serialises").as_bytes())
}

pub fn cohort_fingerprint(cohort: &Cohort) -> Result<String> {
    let mut buf = Vec::new();
    write_cohort(cohort, &mut buf)?;
    Ok(sha256_hex(&buf))
}

impl ModelBundle {
    /// Both models must agree with the bundle on features and vocabulary.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(AppError::Bundle(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let n = self.schema.len();
        if self.outcome_model.binning.n_features() != n || self.diagnosis_model.n_features() != n {
            return Err(AppError::Bundle("models and schema disagree on the number of features".into()));
        }
        let ids: Vec<_> = self.diagnosis_vocab.iter().map(|d| d.id).collect();
        if self.outcome_model.diagnosis_vocab != ids {
            return Err(AppError::Bundle("outcome model vocabulary differs from the bundle".into()));
        }
        if self.diagnosis_model.vocab != self.diagnosis_vocab {
            return Err(AppError::Bundle("diagnosis model vocabulary differs from the bundle".into()));
        }
        Ok(())
    }

    /// Cohorts scored with the bundle must share its feature names and vocabulary.
    pub fn check_cohort(&self, cohort: &Cohort) -> Result<()> {
        if cohort.schema.names != self.schema.names {
            return Err(AppError::Bundle("cohort feature names differ from the bundle schema".into()));
        }
        if cohort.diagnosis_vocab != self.diagnosis_vocab {
            return Err(AppError::Bundle("cohort diagnosis vocabulary differs from the bundle".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bundle: ModelBundle = serde_json::from_str(text).map_err(|e| AppError::Bundle(e.to_string()))?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Checks the serialised form reproduces `self`, then writes it atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let json = self.to_json();
        if &Self::from_json(&json)? != self {
            return Err(AppError::Validation("bundle does not round-trip through JSON".into()));
        }
        write_atomic(path, json.as_bytes())
    }
}
