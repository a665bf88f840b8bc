//! Comparison experiments over per-diagnosis subsets of a cohort.
//!
//! All three harnesses use the additive model without a diagnosis term, fit
//! per diagnosis in parallel and reduced in the order of `d_common`. Each fit
//! holds out part of its training data for early stopping.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{auc, bh_adjust, calibration_report, combined_se, spearman_corr, AucResult, CalibrationReport};
use crate::cohort::{split, Cohort, DiagnosisId, PatientRecord};
use crate::error::{Error, Result};
use crate::gam::{fit_gam, GamConfig, GamModel};
use crate::math;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub gam: GamConfig,
    /// Share of each diagnosis subset held out for testing.
    pub test_fraction: f64,
    /// Share of each training set used for early stopping.
    pub early_stop_fraction: f64,
    pub calibration_bins: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            gam: GamConfig::default(),
            test_fraction: 0.2,
            early_stop_fraction: 0.2,
            calibration_bins: 10,
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// Seed for the fit labelled `(tag, diagnosis)`.
fn derive_seed(seed: u64, tag: u64, d: DiagnosisId) -> u64 {
    let mut rng = math::rng(seed, (tag << 32) | d.0 as u64);
    rng.random()
}

fn fit_feature_model(train: &Cohort, config: &HarnessConfig, seed: u64) -> Result<GamModel> {
    let f = config.early_stop_fraction;
    let (tr, va, _) = split(train, (1.0 - f, f, 0.0), seed)?;
    fit_with_valid(&tr, &va, config, seed)
}

fn fit_with_valid(train: &Cohort, valid: &Cohort, config: &HarnessConfig, seed: u64) -> Result<GamModel> {
    let gam = GamConfig {
        use_diagnosis: false,
        seed,
        ..config.gam.clone()
    };
    fit_gam(train, valid, &gam)
}

fn predict_all(model: &GamModel, cohort: &Cohort) -> Result<Vec<f64>> {
    cohort
        .records
        .iter()
        .map(|r| model.predict(&r.features, None).map(|p| p.probability))
        .collect()
}

fn scored_auc(model: &GamModel, cohort: &Cohort) -> Result<AucResult> {
    auc(&predict_all(model, cohort)?, &cohort.outcomes())
}

fn check_d_common(cohort: &Cohort, d_common: &[DiagnosisId]) -> Result<()> {
    if d_common.is_empty() {
        return Err(Error::InvalidInput("d_common is empty".into()));
    }
    let vocab: HashSet<DiagnosisId> = cohort.vocab_ids().into_iter().collect();
    let mut seen = HashSet::new();
    for d in d_common {
        if !vocab.contains(d) {
            return Err(Error::UnknownDiagnosis(*d));
        }
        if !seen.insert(*d) {
            return Err(Error::InvalidInput(format!("diagnosis {d} listed twice in d_common")));
        }
    }
    Ok(())
}

fn of_diagnosis(cohort: &Cohort, d: DiagnosisId) -> Cohort {
    cohort.filter(|r| r.diagnosis == Some(d))
}

fn mean_with_se(results: &[&AucResult]) -> (Option<f64>, Option<f64>) {
    if results.is_empty() {
        return (None, None);
    }
    let k = results.len() as f64;
    let mean = results.iter().map(|r| r.auc).sum::<f64>() / k;
    let se = results.iter().map(|r| r.standard_error.powi(2)).sum::<f64>().sqrt() / k;
    (Some(mean), Some(se))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcmVsSpecificRow {
    pub diagnosis: DiagnosisId,
    pub n_train: usize,
    pub n_test: usize,
    pub acm: Option<AucResult>,
    pub specific: Option<AucResult>,
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcmVsSpecificReport {
    pub rows: Vec<AcmVsSpecificRow>,
    pub acm_mean_auc: Option<f64>,
    pub acm_mean_se: Option<f64>,
    pub specific_mean_auc: Option<f64>,
    pub specific_mean_se: Option<f64>,
}

impl AcmVsSpecificReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("diagnosis\tn_train\tn_test\tacm_auc\tacm_se\tspecific_auc\tspecific_se\tskipped\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.diagnosis,
                r.n_train,
                r.n_test,
                fmt_opt(r.acm.as_ref().map(|a| a.auc)),
                fmt_opt(r.acm.as_ref().map(|a| a.standard_error)),
                fmt_opt(r.specific.as_ref().map(|a| a.auc)),
                fmt_opt(r.specific.as_ref().map(|a| a.standard_error)),
                r.skipped.as_deref().unwrap_or("")
            );
        }
        let _ = writeln!(
            s,
            "mean\t\t\t{}\t{}\t{}\t{}\t",
            fmt_opt(self.acm_mean_auc),
            fmt_opt(self.acm_mean_se),
            fmt_opt(self.specific_mean_auc),
            fmt_opt(self.specific_mean_se)
        );
        s
    }
}

/// Held-out AUC of the all-cause model against one model per diagnosis.
///
/// Each diagnosis subset is split into train and test parts. The all-cause
/// model trains on every record outside the test parts; each
/// diagnosis-specific model trains on its own train part only. Both are
/// scored on the same test part.
pub fn run_acm_vs_specific(cohort: &Cohort, d_common: &[DiagnosisId], config: &HarnessConfig) -> Result<AcmVsSpecificReport> {
    check_d_common(cohort, d_common)?;
    let t = config.test_fraction;
    let parts: Vec<std::result::Result<(Cohort, Cohort), String>> = d_common
        .iter()
        .map(|&d| {
            split(&of_diagnosis(cohort, d), (1.0 - t, 0.0, t), derive_seed(config.seed, 1, d))
                .map(|(tr, _, te)| (tr, te))
                .map_err(|e| e.to_string())
        })
        .collect();
    let test_ids: HashSet<&str> = parts
        .iter()
        .flatten()
        .flat_map(|(_, te)| te.records.iter().map(|r| r.id.as_str()))
        .collect();
    let acm_train = cohort.filter(|r| !test_ids.contains(r.id.as_str()));
    let acm = fit_feature_model(&acm_train, config, derive_seed(config.seed, 2, DiagnosisId(0)))?;

    let rows: Vec<AcmVsSpecificRow> = d_common
        .par_iter()
        .zip(parts.par_iter())
        .map(|(&d, part)| {
            let (tr, te) = match part {
                Ok(p) => p,
                Err(reason) => {
                    return AcmVsSpecificRow {
                        diagnosis: d,
                        n_train: 0,
                        n_test: 0,
                        acm: None,
                        specific: None,
                        skipped: Some(format!("cannot split: {reason}")),
                    }
                }
            };
            let mut row = AcmVsSpecificRow {
                diagnosis: d,
                n_train: tr.len(),
                n_test: te.len(),
                acm: None,
                specific: None,
                skipped: None,
            };
            let evaluated = fit_feature_model(tr, config, derive_seed(config.seed, 3, d)).and_then(|m| {
                Ok((scored_auc(&acm, te)?, scored_auc(&m, te)?))
            });
            match evaluated {
                Ok((a, s)) => {
                    row.acm = Some(a);
                    row.specific = Some(s);
                }
                Err(e) => row.skipped = Some(e.to_string()),
            }
            row
        })
        .collect();

    let acm_res: Vec<&AucResult> = rows.iter().filter_map(|r| r.acm.as_ref()).collect();
    let spec_res: Vec<&AucResult> = rows.iter().filter_map(|r| r.specific.as_ref()).collect();
    let (acm_mean_auc, acm_mean_se) = mean_with_se(&acm_res);
    let (specific_mean_auc, specific_mean_se) = mean_with_se(&spec_res);
    Ok(AcmVsSpecificReport {
        rows,
        acm_mean_auc,
        acm_mean_se,
        specific_mean_auc,
        specific_mean_se,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutOfDiagnosisRow {
    pub diagnosis: DiagnosisId,
    pub n: usize,
    /// Model trained without `diagnosis`, scored on all of its records.
    pub leave_out: Option<AucResult>,
    /// Model trained on part of `diagnosis`, scored on the rest.
    pub within: Option<AucResult>,
    pub calibration: Option<CalibrationReport>,
    pub adjusted_p: Option<f64>,
    pub flagged: bool,
    pub skipped: Option<String>,
}

impl OutOfDiagnosisRow {
    /// Within-diagnosis AUC minus leave-out AUC, in combined standard errors.
    pub fn within_advantage_z(&self) -> Option<f64> {
        match (&self.within, &self.leave_out) {
            (Some(w), Some(l)) => Some((w.auc - l.auc) / combined_se(w, l)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutOfDiagnosisReport {
    pub rows: Vec<OutOfDiagnosisRow>,
    pub alpha: f64,
}

impl OutOfDiagnosisReport {
    /// Diagnoses whose calibration intercept is significant after adjustment.
    pub fn flagged(&self) -> Vec<DiagnosisId> {
        self.rows.iter().filter(|r| r.flagged).map(|r| r.diagnosis).collect()
    }

    /// Diagnoses where the within-diagnosis model wins by more than `z` combined SEs.
    pub fn within_better(&self, z: f64) -> Vec<DiagnosisId> {
        self.rows
            .iter()
            .filter(|r| r.within_advantage_z().is_some_and(|v| v > z))
            .map(|r| r.diagnosis)
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "diagnosis\tn\tleave_out_auc\tleave_out_se\twithin_auc\twithin_se\twithin_advantage_z\tintercept\tintercept_se\tp_value\tadjusted_p\tflagged\tskipped\n",
        );
        for r in &self.rows {
            let cal = r.calibration.as_ref();
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.diagnosis,
                r.n,
                fmt_opt(r.leave_out.as_ref().map(|a| a.auc)),
                fmt_opt(r.leave_out.as_ref().map(|a| a.standard_error)),
                fmt_opt(r.within.as_ref().map(|a| a.auc)),
                fmt_opt(r.within.as_ref().map(|a| a.standard_error)),
                fmt_opt(r.within_advantage_z()),
                fmt_opt(cal.map(|c| c.intercept)),
                fmt_opt(cal.map(|c| c.standard_error)),
                fmt_opt(cal.map(|c| c.p_value)),
                fmt_opt(r.adjusted_p),
                r.flagged as u8,
                r.skipped.as_deref().unwrap_or("")
            );
        }
        s
    }

    /// Reliability curves of the leave-out models, one row per bin.
    pub fn calibration_tsv(&self) -> String {
        let mut s = String::from("diagnosis\tbin\tmean_predicted\tobserved_rate\tcount\n");
        for r in &self.rows {
            if let Some(c) = &r.calibration {
                for (k, b) in c.bins.iter().enumerate() {
                    let _ = writeln!(
                        s,
                        "{}\t{k}\t{:.6}\t{:.6}\t{}",
                        r.diagnosis, b.mean_predicted, b.observed_rate, b.count
                    );
                }
            }
        }
        s
    }
}

/// Transferability of risk models across diagnoses.
///
/// For every `d`, a model trained on all records except `d` is scored on all
/// of `d` (AUC and calibration), and compared to a model trained on 80% of
/// `d` and scored on the remaining 20%. Calibration intercepts are tested
/// against zero with Benjamini-Hochberg adjustment across diagnoses.
pub fn run_out_of_diagnosis(cohort: &Cohort, d_common: &[DiagnosisId], config: &HarnessConfig) -> Result<OutOfDiagnosisReport> {
    check_d_common(cohort, d_common)?;
    let t = config.test_fraction;
    let mut rows: Vec<OutOfDiagnosisRow> = d_common
        .par_iter()
        .map(|&d| {
            let subset = of_diagnosis(cohort, d);
            let mut row = OutOfDiagnosisRow {
                diagnosis: d,
                n: subset.len(),
                leave_out: None,
                within: None,
                calibration: None,
                adjusted_p: None,
                flagged: false,
                skipped: None,
            };
            let rest = cohort.filter(|r| r.diagnosis != Some(d));
            let leave_out = fit_feature_model(&rest, config, derive_seed(config.seed, 4, d)).and_then(|m| {
                let scores = predict_all(&m, &subset)?;
                let labels = subset.outcomes();
                Ok((auc(&scores, &labels)?, calibration_report(&scores, &labels, config.calibration_bins)?))
            });
            match leave_out {
                Ok((a, c)) => {
                    row.leave_out = Some(a);
                    row.calibration = Some(c);
                }
                Err(e) => {
                    row.skipped = Some(format!("leave-out: {e}"));
                    return row;
                }
            }
            let within = split(&subset, (1.0 - t, 0.0, t), derive_seed(config.seed, 1, d)).and_then(|(tr, _, te)| {
                let m = fit_feature_model(&tr, config, derive_seed(config.seed, 3, d))?;
                scored_auc(&m, &te)
            });
            match within {
                Ok(a) => row.within = Some(a),
                Err(e) => row.skipped = Some(format!("within: {e}")),
            }
            row
        })
        .collect();

    let tested: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].calibration.is_some()).collect();
    let p: Vec<f64> = tested.iter().map(|&i| rows[i].calibration.as_ref().unwrap().p_value).collect();
    let bh = bh_adjust(&p, config.alpha);
    for (k, &i) in tested.iter().enumerate() {
        rows[i].adjusted_p = Some(bh.adjusted[k]);
    }
    for k in bh.rejected {
        rows[tested[k]].flagged = true;
    }
    Ok(OutOfDiagnosisReport { rows, alpha: config.alpha })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCorrelationReport {
    pub diagnoses: Vec<DiagnosisId>,
    /// Off the diagonal: Spearman correlation between models of different
    /// diagnoses. On it: correlation between two bootstrap refits.
    /// `None` where a model's predictions are constant.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub mean_diagonal: Option<f64>,
    pub mean_off_diagonal: Option<f64>,
    pub n_heldout: usize,
}

impl CrossCorrelationReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("diagnosis");
        for d in &self.diagnoses {
            let _ = write!(s, "\t{d}");
        }
        s.push('\n');
        for (d, row) in self.diagnoses.iter().zip(&self.matrix) {
            let _ = write!(s, "{d}");
            for v in row {
                let _ = write!(s, "\t{}", fmt_opt(*v));
            }
            s.push('\n');
        }
        s
    }

    /// Mean diagonal and off-diagonal correlation and the held-out size.
    pub fn summary_tsv(&self) -> String {
        format!(
            "statistic\tvalue\nmean_diagonal\t{}\nmean_off_diagonal\t{}\nn_heldout\t{}\n",
            fmt_opt(self.mean_diagonal),
            fmt_opt(self.mean_off_diagonal),
            self.n_heldout
        )
    }
}

/// Bootstrap resample of `cohort` with out-of-bag records as validation.
/// Duplicated records get a `#k` suffix so ids stay unique.
fn bootstrap(cohort: &Cohort, seed: u64) -> (Cohort, Cohort) {
    let n = cohort.len();
    let mut rng = math::rng(seed, 0);
    let mut counts = vec![0usize; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    let mut records: Vec<PatientRecord> = Vec::with_capacity(n);
    let mut oob = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        let r = &cohort.records[i];
        if c == 0 {
            oob.push(r.clone());
        }
        for k in 0..c {
            let mut copy = r.clone();
            copy.id = format!("{}#{k}", r.id);
            records.push(copy);
        }
    }
    (cohort.with_records(records), cohort.with_records(oob))
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Agreement between per-diagnosis models on patients outside `d_common`.
pub fn run_cross_model_correlation(
    cohort: &Cohort,
    d_common: &[DiagnosisId],
    heldout: &Cohort,
    config: &HarnessConfig,
) -> Result<CrossCorrelationReport> {
    check_d_common(cohort, d_common)?;
    if heldout.len() < 3 {
        return Err(Error::InvalidInput("held-out cohort needs at least 3 records".into()));
    }
    let common: HashSet<DiagnosisId> = d_common.iter().copied().collect();
    if let Some(r) = heldout.records.iter().find(|r| r.diagnosis.is_some_and(|d| common.contains(&d))) {
        return Err(Error::InvalidInput(format!(
            "held-out record {} has a diagnosis in d_common",
            r.id
        )));
    }
    let predictions: Vec<[Vec<f64>; 2]> = d_common
        .par_iter()
        .map(|&d| {
            let subset = of_diagnosis(cohort, d);
            let fit = |tag: u64| -> Result<Vec<f64>> {
                let (tr, oob) = bootstrap(&subset, derive_seed(config.seed, tag, d));
                let m = fit_with_valid(&tr, &oob, config, derive_seed(config.seed, tag + 1, d))?;
                predict_all(&m, heldout)
            };
            Ok([fit(5)?, fit(7)?])
        })
        .collect::<Result<_>>()?;

    let k = d_common.len();
    let mut matrix = vec![vec![None; k]; k];
    for i in 0..k {
        matrix[i][i] = spearman_corr(&predictions[i][0], &predictions[i][1]).ok();
        for j in i + 1..k {
            let v = spearman_corr(&predictions[i][0], &predictions[j][0]).ok();
            matrix[i][j] = v;
            matrix[j][i] = v;
        }
    }
    let mean_diagonal = mean_of((0..k).map(|i| matrix[i][i]));
    let mean_off_diagonal = mean_of((0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).map(|(i, j)| matrix[i][j]));
    Ok(CrossCorrelationReport {
        diagnoses: d_common.to_vec(),
        matrix,
        mean_diagonal,
        mean_off_diagonal,
        n_heldout: heldout.len(),
    })
}
