//! Discrimination and calibration metrics, multiple testing, rank correlation
//! and the experiment harnesses built on them.

mod harness;
mod metrics;

pub use harness::{
    run_acm_vs_specific, run_cross_model_correlation, run_out_of_diagnosis, AcmVsSpecificReport,
    AcmVsSpecificRow, CrossCorrelationReport, HarnessConfig, OutOfDiagnosisReport, OutOfDiagnosisRow,
};
pub use metrics::{
    auc, bh_adjust, calibration_report, combined_se, pearson, spearman_corr, two_sided_p, AucResult,
    BhResult, CalibrationBin, CalibrationReport,
};
