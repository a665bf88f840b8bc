//! The work behind each CLI command, separated from argument parsing.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use duacm_core::cohort::{diagnosis_census, generate_cohort, write_cohort};
use duacm_core::diagmodel::{fit_mlp, one_vs_all_auc};
use duacm_core::duacm::{du_predict, explain, pessimistic_delta, Explanation, RiskDistribution};
use duacm_core::eval::{
    auc, calibration_report, combined_se, run_acm_vs_specific, run_cross_model_correlation, run_out_of_diagnosis,
    AucResult,
};
use duacm_core::gam::{fit_gam, GamConfig};
use duacm_core::linmod::fit_logistic;
use duacm_core::{Cohort, DiagnosisId, DuConfig};
use serde::{Deserialize, Serialize};

use crate::bundle::{cohort_fingerprint, config_hash, ModelBundle, Provenance, SCHEMA_VERSION};
use crate::config::{RunConfig, Stage};
use crate::error::{AppError, Result};
use crate::output::Report;

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn generate(config: &RunConfig) -> Result<Vec<u8>> {
    let cohort = generate_cohort(&config.cohort_spec())?;
    let mut buf = Vec::new();
    write_cohort(&cohort, &mut buf)?;
    Ok(buf)
}

/// Fits the outcome model (with its diagnosis term) and the diagnosis model
/// on the train part, using the validation part for early stopping and grid
/// selection.
pub fn train(config: &RunConfig, cohort: &Cohort) -> Result<ModelBundle> {
    let split = config.split_spec();
    let (train, valid, _) = split.apply(cohort)?;
    let outcome_model = fit_gam(&train, &valid, &config.gam_config())?;
    let diagnosis_model = fit_mlp(&train, &valid, &config.mlp_config())?;
    let bundle = ModelBundle {
        schema_version: SCHEMA_VERSION,
        schema: cohort.schema.clone(),
        diagnosis_vocab: cohort.diagnosis_vocab.clone(),
        outcome_model,
        diagnosis_model,
        split,
        provenance: Provenance {
            config_hash: config_hash(config),
            data_fingerprint: cohort_fingerprint(cohort)?,
            seed: config.seed,
            n_train: train.len(),
            n_valid: valid.len(),
        },
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Which records a scoring command covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    All,
    Train,
    Valid,
    Test,
}

pub fn select(bundle: &ModelBundle, cohort: &Cohort, part: Part) -> Result<Cohort> {
    if part == Part::All {
        return Ok(cohort.clone());
    }
    let (train, valid, test) = bundle.split.apply(cohort)?;
    Ok(match part {
        Part::Train => train,
        Part::Valid => valid,
        _ => test,
    })
}

/// One patient's mixture prediction with its summary numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub id: String,
    pub distribution: RiskDistribution,
    pub q90: f64,
    pub delta: f64,
    pub explanation: Explanation,
}

/// The quantile levels requested by `config` plus 0.9, which the delta needs.
pub fn with_q90(mut config: DuConfig) -> DuConfig {
    if !config.quantiles.iter().any(|q| (q - 0.9).abs() < 1e-12) {
        config.quantiles.push(0.9);
    }
    config
}

pub fn predict_patient(
    bundle: &ModelBundle,
    id: &str,
    features: &[f64],
    config: &DuConfig,
    top_k: usize,
    driver_threshold: f64,
) -> Result<PatientPrediction> {
    let distribution = du_predict(&bundle.outcome_model, &bundle.diagnosis_model, features, config)?;
    let delta = pessimistic_delta(&distribution)?;
    let explanation = explain(&distribution, top_k, driver_threshold);
    Ok(PatientPrediction {
        id: id.to_string(),
        q90: explanation.q90,
        delta,
        distribution,
        explanation,
    })
}

/// Checks the distribution invariants every emitted prediction must satisfy.
pub fn check_distribution(d: &RiskDistribution) -> std::result::Result<(), String> {
    let total: f64 = d.entries.iter().map(|e| e.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(format!("weights sum to {total}"));
    }
    if !(0.0..=1.0).contains(&d.mean) {
        return Err(format!("mean {} outside [0, 1]", d.mean));
    }
    let (lo, hi) = (d.min_risk(), d.max_risk());
    for &(level, v) in &d.quantiles {
        if v < lo || v > hi {
            return Err(format!("quantile {level} = {v} outside [{lo}, {hi}]"));
        }
    }
    Ok(())
}

fn predictions(config: &RunConfig, bundle: &ModelBundle, cohort: &Cohort) -> Result<Vec<PatientPrediction>> {
    let base = with_q90(config.du_config());
    let e = &config.evaluate;
    cohort
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let c = DuConfig {
                seed: base.seed.wrapping_add(i as u64),
                ..base.clone()
            };
            let p = predict_patient(bundle, &r.id, &r.features, &c, e.top_k, e.driver_threshold)?;
            check_distribution(&p.distribution).map_err(|m| AppError::Validation(format!("patient {}: {m}", r.id)))?;
            Ok(p)
        })
        .collect()
}

fn level_name(level: f64) -> String {
    format!("q{}", level * 100.0)
}

pub fn predict(config: &RunConfig, bundle: &ModelBundle, cohort: &Cohort, part: Part) -> Result<String> {
    bundle.check_cohort(cohort)?;
    let subset = select(bundle, cohort, part)?;
    let preds = predictions(config, bundle, &subset)?;
    let levels = with_q90(config.du_config()).quantiles;
    let mut s = String::from("id\tmean");
    for &l in &levels {
        let _ = write!(s, "\t{}", level_name(l));
    }
    s.push_str("\tdelta\tmin_risk\tmax_risk\ttop_diagnoses\trisk_drivers\n");
    for p in &preds {
        let d = &p.distribution;
        let _ = write!(s, "{}\t{}", p.id, f6(d.mean));
        for &l in &levels {
            let _ = write!(s, "\t{}", f6(d.stored_quantile(l).expect("requested level")));
        }
        let top: Vec<String> = p.explanation.ranked.iter().map(|e| format!("{}:{:.4}", e.diagnosis, e.probability)).collect();
        let drivers: Vec<String> = p.explanation.risk_drivers.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{}\t{}",
            f6(p.delta),
            f6(d.min_risk()),
            f6(d.max_risk()),
            top.join(";"),
            drivers.join(";")
        );
    }
    Ok(s)
}

fn metric_row(s: &mut String, name: &str, value: f64, se: Option<f64>, n: usize) {
    let _ = writeln!(s, "{name}\t{}\t{}\t{n}", f6(value), se.map_or("NA".into(), f6));
}

fn auc_row(s: &mut String, name: &str, r: &AucResult) {
    metric_row(s, name, r.auc, Some(r.standard_error), r.n_pos + r.n_neg);
}

/// Metric report of a bundle on its test split.
pub fn evaluate(config: &RunConfig, bundle: &ModelBundle, cohort: &Cohort) -> Result<Report> {
    bundle.check_cohort(cohort)?;
    let test = select(bundle, cohort, Part::Test)?;
    let labels = test.outcomes();
    let preds = predictions(config, bundle, &test)?;
    let mean: Vec<f64> = preds.iter().map(|p| p.distribution.mean).collect();
    let q90: Vec<f64> = preds.iter().map(|p| p.q90).collect();
    let with_diagnosis = test
        .records
        .iter()
        .map(|r| bundle.outcome_model.predict(&r.features, r.diagnosis).map(|p| p.probability))
        .collect::<duacm_core::Result<Vec<f64>>>()?;
    let calibration = calibration_report(&mean, &labels, config.evaluate.calibration_bins)?;
    let diagnosis_auc = one_vs_all_auc(&bundle.diagnosis_model, &test)?;

    let mut metrics = String::from("metric\tvalue\tstandard_error\tn\n");
    auc_row(&mut metrics, "outcome_auc_recorded_diagnosis", &auc(&with_diagnosis, &labels)?);
    auc_row(&mut metrics, "du_mean_auc", &auc(&mean, &labels)?);
    auc_row(&mut metrics, "du_q90_auc", &auc(&q90, &labels)?);
    if let Some(m) = diagnosis_auc.macro_auc {
        metric_row(&mut metrics, "diagnosis_macro_auc", m, None, test.len());
    }
    metric_row(&mut metrics, "du_mean_calibration_intercept", calibration.intercept, Some(calibration.standard_error), test.len());
    metric_row(&mut metrics, "du_mean_calibration_p_value", calibration.p_value, None, test.len());
    let mean_delta = preds.iter().map(|p| p.delta).sum::<f64>() / preds.len().max(1) as f64;
    metric_row(&mut metrics, "mean_pessimistic_delta", mean_delta, None, test.len());

    let mut cal = String::from("bin\tmean_predicted\tobserved_rate\tcount\n");
    for (i, b) in calibration.bins.iter().enumerate() {
        let _ = writeln!(cal, "{i}\t{}\t{}\t{}", f6(b.mean_predicted), f6(b.observed_rate), b.count);
    }
    let mut per_class = String::from("diagnosis\tn_positive\tauc\tstandard_error\n");
    for c in &diagnosis_auc.per_class {
        let (a, se) = c.auc.as_ref().map_or(("NA".into(), "NA".into()), |r| (f6(r.auc), f6(r.standard_error)));
        let _ = writeln!(per_class, "{}\t{}\t{a}\t{se}", c.diagnosis, c.n_positive);
    }
    let mut sizes = String::from("diagnosis\tname\tcount\tdeaths\tmortality\n");
    let names: BTreeMap<DiagnosisId, &str> = cohort.diagnosis_vocab.iter().map(|d| (d.id, d.name.as_str())).collect();
    for e in diagnosis_census(cohort, 0, 0.0) {
        let _ = writeln!(sizes, "{}\t{}\t{}\t{}\t{}", e.diagnosis, names[&e.diagnosis], e.count, e.deaths, f6(e.mortality));
    }

    let mut report = Report::new();
    report.add("metrics.tsv", metrics);
    report.add("calibration.tsv", cal);
    report.add("diagnosis_auc.tsv", per_class);
    report.add("diagnosis_sizes.tsv", sizes);
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    AcmVsSpecific,
    OutOfDiagnosis,
    CrossCorrelation,
    DuSummary,
}

/// Diagnoses passing the configured census filter.
pub fn d_common(config: &RunConfig, cohort: &Cohort) -> Result<Vec<DiagnosisId>> {
    let e = &config.experiment;
    let ids: Vec<DiagnosisId> = diagnosis_census(cohort, e.min_patients, e.min_mortality)
        .into_iter()
        .map(|c| c.diagnosis)
        .collect();
    if ids.is_empty() {
        return Err(AppError::Usage(format!(
            "no diagnosis has at least {} patients and mortality >= {}",
            e.min_patients, e.min_mortality
        )));
    }
    Ok(ids)
}

pub fn experiment(config: &RunConfig, which: Experiment, cohort: &Cohort, bundle: Option<&ModelBundle>) -> Result<Report> {
    let mut report = Report::new();
    match which {
        Experiment::AcmVsSpecific => {
            let common = d_common(config, cohort)?;
            let rep = run_acm_vs_specific(cohort, &common, &config.harness_config())?;
            report.add("acm_vs_specific.tsv", rep.to_tsv());
            report.add("model_comparison.tsv", model_comparison(config, cohort)?);
        }
        Experiment::OutOfDiagnosis => {
            let common = d_common(config, cohort)?;
            let rep = run_out_of_diagnosis(cohort, &common, &config.harness_config())?;
            report.add("out_of_diagnosis.tsv", rep.to_tsv());
            report.add("calibration.tsv", rep.calibration_tsv());
        }
        Experiment::CrossCorrelation => {
            let common = d_common(config, cohort)?;
            let set: HashSet<DiagnosisId> = common.iter().copied().collect();
            let heldout = cohort.filter(|r| r.diagnosis.is_none_or(|d| !set.contains(&d)));
            let rep = run_cross_model_correlation(cohort, &common, &heldout, &config.harness_config())?;
            report.add("cross_correlation.tsv", rep.to_tsv());
            report.add("cross_correlation_summary.tsv", rep.summary_tsv());
        }
        Experiment::DuSummary => {
            let bundle = bundle.ok_or_else(|| AppError::Usage("du-summary needs --bundle".into()))?;
            bundle.check_cohort(cohort)?;
            let test = select(bundle, cohort, Part::Test)?;
            let preds = predictions(config, bundle, &test)?;
            du_summary(config, &test, &preds, &mut report);
        }
    }
    Ok(report)
}

/// Held-out AUC of the logistic baseline against the additive model, both
/// without diagnosis, on the configured split.
fn model_comparison(config: &RunConfig, cohort: &Cohort) -> Result<String> {
    let e = &config.experiment;
    let (train, valid, test) = config.split_spec().apply(cohort)?;
    let gam = fit_gam(
        &train,
        &valid,
        &GamConfig {
            use_diagnosis: false,
            seed: config.stage_seed(Stage::Gam),
            ..e.harness.gam.clone()
        },
    )?;
    let lin = fit_logistic(&train.concat(&valid)?, &e.logistic_lambdas, e.logistic_folds, config.stage_seed(Stage::Logistic))?;
    let labels = test.outcomes();
    let score = |f: &dyn Fn(&[f64]) -> duacm_core::Result<f64>| -> Result<AucResult> {
        let s = test.records.iter().map(|r| f(&r.features)).collect::<duacm_core::Result<Vec<f64>>>()?;
        Ok(auc(&s, &labels)?)
    };
    let g = score(&|x| gam.predict(x, None).map(|p| p.probability))?;
    let l = score(&|x| lin.predict(x))?;
    let mut s = String::from("model\tauc\tstandard_error\n");
    let _ = writeln!(s, "additive\t{}\t{}", f6(g.auc), f6(g.standard_error));
    let _ = writeln!(s, "logistic\t{}\t{}", f6(l.auc), f6(l.standard_error));
    let _ = writeln!(s, "difference_z\t{}\tNA", f6((g.auc - l.auc) / combined_se(&g, &l)));
    Ok(s)
}

fn du_summary(config: &RunConfig, test: &Cohort, preds: &[PatientPrediction], report: &mut Report) {
    let width = config.experiment.delta_bin_width;
    let mut scatter = String::from("id\tdiagnosis\toutcome\tmean\tq90\tdelta\n");
    for (r, p) in test.records.iter().zip(preds) {
        let d = r.diagnosis.map_or(String::new(), |d| d.to_string());
        let _ = writeln!(scatter, "{}\t{d}\t{}\t{}\t{}\t{}", r.id, r.outcome as u8, f6(p.distribution.mean), f6(p.q90), f6(p.delta));
    }

    let bin = |delta: f64| (delta / width).floor() as i64;
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (r, p) in test.records.iter().zip(preds) {
        groups.entry("all".into()).or_default().push(p.delta);
        let g = r.diagnosis.map_or("unlabelled".to_string(), |d| format!("d{d}"));
        groups.entry(g).or_default().push(p.delta);
    }
    let all = groups.get("all").cloned().unwrap_or_default();
    let lo = all.iter().map(|&d| bin(d)).min().unwrap_or(0);
    let hi = all.iter().map(|&d| bin(d)).max().unwrap_or(0);
    let mut hist = String::from("group\tbin_lower\tbin_upper\tcount\tshare\n");
    let mut summary = String::from("group\tn\tmean_delta\tshare_above_0.2\n");
    for (g, deltas) in &groups {
        let mut counts = vec![0usize; (hi - lo + 1) as usize];
        for &d in deltas {
            counts[(bin(d) - lo) as usize] += 1;
        }
        let n = deltas.len() as f64;
        for (k, c) in counts.iter().enumerate() {
            let lower = (lo + k as i64) as f64 * width;
            let _ = writeln!(hist, "{g}\t{}\t{}\t{c}\t{}", f6(lower), f6(lower + width), f6(*c as f64 / n));
        }
        let above = deltas.iter().filter(|&&d| d > 0.2).count() as f64 / n;
        let _ = writeln!(summary, "{g}\t{}\t{}\t{}", deltas.len(), f6(deltas.iter().sum::<f64>() / n), f6(above));
    }
    report.add("du_scatter.tsv", scatter);
    report.add("du_histogram.tsv", hist);
    report.add("du_groups.tsv", summary);
}
