#![allow(dead_code)]

use duacm_core::cohort::{Cohort, Diagnosis, DiagnosisId, FeatureSchema, PatientRecord};
use duacm_core::diagmodel::{DiagnosisModel, MlpConfig};
use duacm_core::gam::{BinningSpec, DiagnosisOffset, GamConfig, GamModel};
use duacm_core::math::logit;

pub fn vocab(n: usize) -> Vec<Diagnosis> {
    (0..n as u32)
        .map(|i| Diagnosis { id: DiagnosisId(i), name: format!("dx{i}") })
        .collect()
}

/// Cohort from `(features, diagnosis, outcome)` rows.
pub fn cohort_from(rows: Vec<(Vec<f64>, Option<u32>, bool)>, n_diagnoses: usize) -> Cohort {
    let n_features = rows.first().map_or(0, |r| r.0.len());
    let records: Vec<PatientRecord> = rows
        .into_iter()
        .enumerate()
        .map(|(i, (features, d, outcome))| PatientRecord {
            id: format!("p{i}"),
            features,
            diagnosis: d.map(DiagnosisId),
            outcome,
            latent_state: None,
        })
        .collect();
    let schema = FeatureSchema::from_rows(n_features, records.iter().map(|r| r.features.as_slice()));
    Cohort::new(schema, records, vocab(n_diagnoses)).unwrap()
}

/// Fewer bags and rounds than the defaults; enough for tests at n <= 10^4.
pub fn quick_gam(use_diagnosis: bool, seed: u64) -> GamConfig {
    GamConfig {
        use_diagnosis,
        inner_bags: 4,
        outer_bags: 2,
        learning_rate: 0.2,
        max_rounds: 600,
        patience: Some(30),
        seed,
        ..GamConfig::default()
    }
}

pub fn quick_mlp(epochs: usize, seed: u64) -> MlpConfig {
    MlpConfig {
        learning_rates: vec![0.1],
        weight_decays: vec![1e-4],
        epochs,
        seed,
        ..MlpConfig::default()
    }
}

/// Outcome and diagnosis models that ignore the features: the posterior is
/// `probabilities` and diagnosis `i` carries risk `risks[i]`.
pub fn fixed_mixture(probabilities: &[f64], risks: &[f64], n_features: usize) -> (GamModel, DiagnosisModel) {
    let k = probabilities.len();
    let binning = BinningSpec { cuts: vec![Vec::new(); n_features], max_bins: 2 };
    let mut gam = GamModel::constant(binning, 0.0);
    gam.diagnosis_offsets = risks
        .iter()
        .enumerate()
        .map(|(i, &r)| DiagnosisOffset { diagnosis: DiagnosisId(i as u32), offset: logit(r), count: 1 })
        .collect();
    gam.diagnosis_vocab = (0..k as u32).map(DiagnosisId).collect();
    let diag = DiagnosisModel::constant(n_features, vocab(k), probabilities).unwrap();
    (gam, diag)
}
