mod common;

use common::{cohort_from, quick_mlp, vocab};
use duacm_core::cohort::{generate_cohort, presets, split, Cohort, DiagnosisId};
use duacm_core::diagmodel::{
    fit_mlp, one_vs_all_auc, predict_diagnosis, sample_diagnoses, DiagnosisDistribution, DiagnosisModel, Mlp, MlpConfig,
};
use duacm_core::math::{rng, Standardization};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Gaussian clusters around `centres`, one class per centre.
fn clusters(n: usize, centres: &[[f64; 2]], seed: u64) -> Cohort {
    let mut r = rng(seed, 0);
    let rows = (0..n)
        .map(|i| {
            let c = i % centres.len();
            let x = centres[c].iter().map(|m| m + r.sample::<f64, _>(StandardNormal)).collect();
            (x, Some(c as u32), r.random_bool(0.1))
        })
        .collect();
    cohort_from(rows, centres.len())
}

fn accuracy(model: &DiagnosisModel, test: &Cohort) -> f64 {
    let hits = test
        .records
        .iter()
        .filter(|r| {
            let p = model.predict(&r.features).unwrap().probabilities;
            let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
            Some(DiagnosisId(best as u32)) == r.diagnosis
        })
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn separable_clusters_are_classified() {
    let cohort = clusters(5000, &[[-3.0, 0.0], [3.0, 0.0]], 1);
    let (train, valid, test) = split(&cohort, (0.6, 0.2, 0.2), 1).unwrap();
    let m = fit_mlp(&train, &valid, &quick_mlp(15, 2)).unwrap();
    assert!(accuracy(&m, &test) > 0.95);
    let far = clusters(3000, &[[-8.0, 0.0], [8.0, 0.0], [0.0, 8.0]], 2);
    let (train, valid, test) = split(&far, (0.6, 0.2, 0.2), 2).unwrap();
    let m = fit_mlp(&train, &valid, &quick_mlp(15, 3)).unwrap();
    assert_eq!(one_vs_all_auc(&m, &test).unwrap().macro_auc, Some(1.0));
}

#[test]
fn shuffled_labels_reach_the_no_information_loss() {
    let mut r = rng(3, 0);
    let rows = (0..6000)
        .map(|i| ((0..4).map(|_| r.sample(StandardNormal)).collect(), Some((i % 10) as u32), false))
        .collect();
    let cohort = cohort_from(rows, 10);
    let (train, valid, test) = split(&cohort, (0.6, 0.2, 0.2), 3).unwrap();
    let config = MlpConfig { learning_rates: vec![0.03, 0.01], weight_decays: vec![1e-3], ..quick_mlp(10, 4) };
    let m = fit_mlp(&train, &valid, &config).unwrap();
    let loss: f64 = test
        .records
        .iter()
        .map(|r| -m.predict(&r.features).unwrap().probability(r.diagnosis.unwrap()).unwrap().ln())
        .sum::<f64>()
        / test.len() as f64;
    let bound = 10f64.ln();
    assert!((loss - bound).abs() < 0.05 * bound, "held-out log-loss {loss}");
}

#[test]
fn confusable_pair_splits_by_prior_odds() {
    let cohort = generate_cohort(&presets::confusable(10_000, 5)).unwrap();
    let (train, valid, test) = split(&cohort, (0.6, 0.2, 0.2), 4).unwrap();
    let m = fit_mlp(&train, &valid, &quick_mlp(15, 5)).unwrap();
    let shares: Vec<f64> = test
        .records
        .iter()
        .filter(|r| matches!(r.diagnosis, Some(DiagnosisId(0 | 1))))
        .map(|r| {
            let p = m.predict(&r.features).unwrap().probabilities;
            p[1] / (p[0] + p[1])
        })
        .collect();
    let mean = shares.iter().sum::<f64>() / shares.len() as f64;
    let odds_share = 0.10 / (0.45 + 0.10);
    assert!((mean - odds_share).abs() < 0.05, "mean risky share {mean}");
}

#[test]
fn uniform_sampling_frequencies() {
    let dist = DiagnosisDistribution { vocab: (0..4).map(DiagnosisId).collect(), probabilities: vec![0.25; 4] };
    let draws = sample_diagnoses(&dist, 100_000, 7).unwrap();
    let se = (0.25f64 * 0.75 / 100_000.0).sqrt();
    for d in 0..4 {
        let f = draws.iter().filter(|&&x| x == DiagnosisId(d)).count() as f64 / 1e5;
        assert!((f - 0.25).abs() < 3.0 * se, "diagnosis {d}: {f}");
    }
}

#[test]
fn majority_frequency_in_150_draws() {
    let dist = DiagnosisDistribution { vocab: vec![DiagnosisId(0), DiagnosisId(1)], probabilities: vec![0.9, 0.1] };
    let inside = (0..1000u64)
        .filter(|&seed| {
            let draws = sample_diagnoses(&dist, 150, seed).unwrap();
            let f = draws.iter().filter(|&&d| d == DiagnosisId(0)).count() as f64 / 150.0;
            (0.81..=0.97).contains(&f)
        })
        .count();
    assert!(inside >= 990, "{inside} of 1000 within [0.81, 0.97]");
}

#[test]
fn untrained_network_has_chance_one_vs_all_auc() {
    let mut r = rng(9, 0);
    let rows = (0..5000)
        .map(|i| ((0..3).map(|_| r.sample(StandardNormal)).collect(), Some((i % 4) as u32), false))
        .collect();
    let cohort = cohort_from(rows, 4);
    let mut m = DiagnosisModel::zeroed(3, vocab(4), 16);
    m.network = Mlp::random(&m.network.sizes, &mut rng(10, 0));
    let res = one_vs_all_auc(&m, &cohort).unwrap();
    let macro_auc = res.macro_auc.unwrap();
    assert!((macro_auc - 0.5).abs() < 0.03, "macro auc {macro_auc}");
    assert_eq!(res.per_class.len(), 4);
}

#[test]
fn positive_affine_rescaling_is_absorbed_by_standardisation() {
    let cohort = clusters(1500, &[[-1.0, 0.0], [1.0, 0.5], [0.0, -1.0]], 6);
    let rescale = |c: &Cohort| {
        c.with_records(
            c.records
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.features = vec![1000.0 * r.features[0] + 50.0, 0.02 * r.features[1] + 3.0];
                    r
                })
                .collect(),
        )
    };
    let (train, valid, test) = split(&cohort, (0.6, 0.2, 0.2), 5).unwrap();
    let config = quick_mlp(5, 7);
    let a = fit_mlp(&train, &valid, &config).unwrap();
    let b = fit_mlp(&rescale(&train), &rescale(&valid), &config).unwrap();
    for (ra, rb) in test.records.iter().zip(&rescale(&test).records) {
        let (pa, pb) = (a.predict(&ra.features).unwrap(), b.predict(&rb.features).unwrap());
        for (x, y) in pa.probabilities.iter().zip(&pb.probabilities) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn fitting_is_deterministic_and_validates_inputs() {
    let cohort = clusters(600, &[[-1.0, 0.0], [1.0, 0.0]], 8);
    let (train, valid, _) = split(&cohort, (0.7, 0.3, 0.0), 6).unwrap();
    let config = quick_mlp(3, 9);
    assert_eq!(fit_mlp(&train, &valid, &config).unwrap(), fit_mlp(&train, &valid, &config).unwrap());

    let empty_grid = MlpConfig { learning_rates: vec![], ..config.clone() };
    assert!(fit_mlp(&train, &valid, &empty_grid).is_err());
    let mut unlabeled = train.clone();
    unlabeled.records[0].diagnosis = None;
    assert!(fit_mlp(&unlabeled, &valid, &config).is_err());

    let m = fit_mlp(&train, &valid, &config).unwrap();
    assert!(predict_diagnosis(&m, &[0.0]).is_err());
    assert!(predict_diagnosis(&m, &[0.0, f64::NAN]).is_err());
}

fn random_model() -> DiagnosisModel {
    let mut m = DiagnosisModel::zeroed(3, vocab(5), 8);
    m.network = Mlp::random(&m.network.sizes, &mut rng(12, 0));
    m.standardization = Standardization { mean: vec![0.5, -1.0, 2.0], sd: vec![2.0, 0.5, 1.0] };
    m
}

proptest! {
    #[test]
    fn predictions_are_normalised(x in prop::collection::vec(-50.0f64..50.0, 3)) {
        let p = random_model().predict(&x).unwrap().probabilities;
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
