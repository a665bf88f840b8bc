//! Diagnosis-uncertain all-cause risk modelling.
//!
//! An all-cause model (ACM) predicts outcome risk from intake features alone.
//! When several diagnoses are compatible with the same features the ACM returns
//! their probability-weighted average, which hides rare but risky causes. This
//! crate trains an outcome model `f(x, d)` and a diagnosis model `g(x)` and, at
//! inference time, exposes the whole distribution of risk induced by the
//! diagnosis posterior: its mean, a pessimistic quantile, explanations and
//! interactive rule-out updates.
//!
//! Modules:
//! - [`cohort`]: synthetic cohorts with known ground truth, splitting, census and file I/O.
//! - [`linmod`]: cross-validated L2 logistic regression baseline.
//! - [`gam`]: EBM-style additive model with binned shape functions and diagnosis offsets.
//! - [`diagmodel`]: two-hidden-layer softmax classifier for the diagnosis posterior.
//! - [`duacm`]: mixture inference, pessimistic delta, explanations and rule-out sessions.
//! - [`eval`]: AUC, calibration, multiple-testing and the comparison harnesses.

pub mod cohort;
pub mod diagmodel;
pub mod duacm;
pub mod error;
pub mod eval;
pub mod gam;
pub mod linmod;
pub mod math;

pub use cohort::{Cohort, CohortSpec, DiagnosisId, PatientRecord};
pub use diagmodel::{DiagnosisDistribution, DiagnosisModel};
pub use duacm::{DuConfig, Explanation, InferenceMode, RiskDistribution, RuleOutSession};
pub use error::{Error, Result};
pub use gam::{GamConfig, GamModel};
pub use linmod::LinearModel;
