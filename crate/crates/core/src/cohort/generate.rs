use std::collections::BTreeMap;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Cohort, Diagnosis, DiagnosisId, FeatureSchema, PatientRecord};
use crate::error::{Error, Result};
use crate::math::{self, sigmoid};

/// Two diagnoses whose latent centres differ only by `separation` along one
/// direction. With `separation == 0` they are indistinguishable from features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusablePair {
    pub a: DiagnosisId,
    pub b: DiagnosisId,
    pub separation: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMapKind {
    /// `x = z`; requires `n_features == latent_dim`.
    Identity,
    /// Each feature is a strictly monotone affine-plus-tanh map of one latent coordinate.
    #[default]
    Monotone,
}

/// Parameters of the synthetic data-generating process.
///
/// A patient draws a diagnosis `d` from the prior, a latent state
/// `z ~ N(mu_d, I)`, features `x = h(z) + noise` and an outcome
/// `y ~ Bernoulli(sigmoid(risk_weights . z + baseline_logit + beta_true(d)))`.
/// The implied `p(d | z)` is a softmax of affine scores in `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub n_features: usize,
    pub latent_dim: usize,
    pub n_diagnoses: usize,
    /// Prior `p(d) ∝ (d + 1)^-s` unless `diagnosis_prior` is given.
    pub zipf_exponent: f64,
    /// Explicit prior weights (normalised on use); overrides the Zipf prior.
    pub diagnosis_prior: Option<Vec<f64>>,
    pub confusable_pairs: Vec<ConfusablePair>,
    /// True log-odds offset per diagnosis; missing entries are 0.
    #[serde(with = "offset_pairs")]
    pub beta_true: BTreeMap<DiagnosisId, f64>,
    pub risk_weights: Vec<f64>,
    pub baseline_logit: f64,
    pub feature_noise_sd: f64,
    /// Norm of each diagnosis centre in latent space.
    pub diagnosis_spread: f64,
    /// Explicit latent centre per diagnosis, replacing the random draw on a
    /// sphere of radius `diagnosis_spread`. Confusable pairs still derive the
    /// second member's centre from the first.
    pub diagnosis_centers: Option<Vec<Vec<f64>>>,
    pub feature_map: FeatureMapKind,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_patients: 10_000,
            n_features: 8,
            latent_dim: 4,
            n_diagnoses: 20,
            zipf_exponent: 1.2,
            diagnosis_prior: None,
            confusable_pairs: Vec::new(),
            beta_true: BTreeMap::new(),
            risk_weights: vec![0.9, -0.7, 0.5, 0.3],
            baseline_logit: -2.2,
            feature_noise_sd: 0.2,
            diagnosis_spread: 2.0,
            diagnosis_centers: None,
            feature_map: FeatureMapKind::Monotone,
            seed: 0,
        }
    }
}

mod offset_pairs {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<DiagnosisId, f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(m.iter().map(|(k, v)| (k, v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<DiagnosisId, f64>, D::Error> {
        let pairs: Vec<(DiagnosisId, f64)> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().collect())
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::invalid("n_patients", "must be at least 1"));
        }
        if self.n_features == 0 {
            return Err(Error::invalid("n_features", "must be at least 1"));
        }
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim", "must be at least 1"));
        }
        if self.n_diagnoses == 0 {
            return Err(Error::invalid("n_diagnoses", "must be at least 1"));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent > 0.0) {
            return Err(Error::invalid("zipf_exponent", "must be positive"));
        }
        if let Some(p) = &self.diagnosis_prior {
            if p.len() != self.n_diagnoses {
                return Err(Error::invalid("diagnosis_prior", "length must equal n_diagnoses"));
            }
            if p.iter().any(|v| !v.is_finite() || *v < 0.0) || p.iter().sum::<f64>() <= 0.0 {
                return Err(Error::invalid("diagnosis_prior", "weights must be non-negative with positive sum"));
            }
        }
        let in_range = |d: DiagnosisId| (d.0 as usize) < self.n_diagnoses;
        for pair in &self.confusable_pairs {
            if !in_range(pair.a) || !in_range(pair.b) {
                return Err(Error::invalid("confusable_pairs", format!("diagnosis id out of range in ({}, {})", pair.a, pair.b)));
            }
            if pair.a == pair.b {
                return Err(Error::invalid("confusable_pairs", "a pair needs two distinct diagnoses"));
            }
            if !(pair.separation.is_finite() && pair.separation >= 0.0) {
                return Err(Error::invalid("confusable_pairs", "separation must be finite and >= 0"));
            }
        }
        for (d, b) in &self.beta_true {
            if !in_range(*d) {
                return Err(Error::invalid("beta_true", format!("diagnosis id {d} out of range")));
            }
            if !b.is_finite() {
                return Err(Error::invalid("beta_true", "offsets must be finite"));
            }
        }
        if self.risk_weights.len() != self.latent_dim {
            return Err(Error::invalid("risk_weights", "length must equal latent_dim"));
        }
        if self.risk_weights.iter().any(|w| !w.is_finite()) || !self.baseline_logit.is_finite() {
            return Err(Error::invalid("risk_weights", "must be finite"));
        }
        if !(self.feature_noise_sd.is_finite() && self.feature_noise_sd >= 0.0) {
            return Err(Error::invalid("feature_noise_sd", "must be finite and >= 0"));
        }
        if !(self.diagnosis_spread.is_finite() && self.diagnosis_spread >= 0.0) {
            return Err(Error::invalid("diagnosis_spread", "must be finite and >= 0"));
        }
        if let Some(c) = &self.diagnosis_centers {
            if c.len() != self.n_diagnoses || c.iter().any(|v| v.len() != self.latent_dim) {
                return Err(Error::invalid("diagnosis_centers", "need n_diagnoses vectors of length latent_dim"));
            }
            if c.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid("diagnosis_centers", "must be finite"));
            }
        }
        if self.feature_map == FeatureMapKind::Identity && self.n_features != self.latent_dim {
            return Err(Error::invalid("feature_map", "identity map needs n_features == latent_dim"));
        }
        Ok(())
    }

    pub fn beta(&self, d: DiagnosisId) -> f64 {
        self.beta_true.get(&d).copied().unwrap_or(0.0)
    }

    pub fn prior(&self) -> Vec<f64> {
        match &self.diagnosis_prior {
            Some(p) => {
                let s: f64 = p.iter().sum();
                p.iter().map(|v| v / s).collect()
            }
            None => zipf_prior(self.n_diagnoses, self.zipf_exponent),
        }
    }
}

pub fn zipf_prior(n: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-exponent)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// `x = sign * (slope * z_k + amplitude * tanh(steepness * (z_k - shift)))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneFeature {
    pub latent: usize,
    pub sign: f64,
    pub slope: f64,
    pub amplitude: f64,
    pub steepness: f64,
    pub shift: f64,
}

impl MonotoneFeature {
    pub fn eval(&self, zk: f64) -> f64 {
        self.sign * (self.slope * zk + self.amplitude * (self.steepness * (zk - self.shift)).tanh())
    }

    /// Inverse by bisection; the map is strictly monotone with slope >= `slope`.
    pub fn invert(&self, x: f64) -> f64 {
        let target = x * self.sign;
        let g = |z: f64| self.slope * z + self.amplitude * (self.steepness * (z - self.shift)).tanh();
        let span = (target.abs() + self.amplitude) / self.slope + self.shift.abs() + 1.0;
        let (mut lo, mut hi) = (-span, span);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureMap {
    Identity,
    Monotone(Vec<MonotoneFeature>),
}

impl FeatureMap {
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Identity => z.to_vec(),
            FeatureMap::Monotone(fs) => fs.iter().map(|f| f.eval(z[f.latent])).collect(),
        }
    }

    /// Recovers `z` from noiseless features. Needs one feature per latent coordinate.
    pub fn invert(&self, x: &[f64], latent_dim: usize) -> Vec<f64> {
        match self {
            FeatureMap::Identity => x[..latent_dim].to_vec(),
            FeatureMap::Monotone(fs) => (0..latent_dim).map(|k| fs[k].invert(x[k])).collect(),
        }
    }
}

/// Fully instantiated generating process: prior, latent centres and feature map.
/// Everything is a deterministic function of the spec (including its seed).
#[derive(Clone, Debug)]
pub struct GenerativeModel {
    pub spec: CohortSpec,
    pub prior: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
    pub feature_map: FeatureMap,
}

fn unit_vector(rng: &mut math::Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl GenerativeModel {
    pub fn new(spec: &CohortSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = math::rng(spec.seed, 0);
        let mut centers: Vec<Vec<f64>> = match &spec.diagnosis_centers {
            Some(c) => c.clone(),
            None => (0..spec.n_diagnoses)
                .map(|_| {
                    unit_vector(&mut rng, spec.latent_dim)
                        .into_iter()
                        .map(|v| v * spec.diagnosis_spread)
                        .collect()
                })
                .collect(),
        };
        for pair in &spec.confusable_pairs {
            let dir = unit_vector(&mut rng, spec.latent_dim);
            let base = centers[pair.a.0 as usize].clone();
            centers[pair.b.0 as usize] = base
                .iter()
                .zip(&dir)
                .map(|(c, u)| c + pair.separation * u)
                .collect();
        }
        let feature_map = match spec.feature_map {
            FeatureMapKind::Identity => FeatureMap::Identity,
            FeatureMapKind::Monotone => FeatureMap::Monotone(
                (0..spec.n_features)
                    .map(|j| MonotoneFeature {
                        latent: j % spec.latent_dim,
                        sign: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                        slope: rng.random_range(0.15..0.4),
                        amplitude: rng.random_range(1.0..2.0),
                        steepness: rng.random_range(1.5..3.0),
                        shift: rng.random_range(-0.8..0.8),
                    })
                    .collect(),
            ),
        };
        Ok(GenerativeModel {
            prior: spec.prior(),
            spec: spec.clone(),
            centers,
            feature_map,
        })
    }

    pub fn risk_score(&self, z: &[f64], d: DiagnosisId) -> f64 {
        math::dot(&self.spec.risk_weights, z) + self.spec.baseline_logit + self.spec.beta(d)
    }

    pub fn true_risk(&self, z: &[f64], d: DiagnosisId) -> Result<f64> {
        if d.0 as usize >= self.spec.n_diagnoses {
            return Err(Error::UnknownDiagnosis(d));
        }
        if z.len() != self.spec.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.latent_dim,
                got: z.len(),
            });
        }
        Ok(sigmoid(self.risk_score(z, d)))
    }

    /// Exact `p(d | z)`: a softmax over `log prior_d - |mu_d|^2 / 2 + mu_d . z`.
    pub fn diagnosis_posterior_given_latent(&self, z: &[f64]) -> Vec<f64> {
        let scores: Vec<f64> = self
            .centers
            .iter()
            .zip(&self.prior)
            .map(|(mu, &p)| {
                if p <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    p.ln() - 0.5 * math::dot(mu, mu) + math::dot(mu, z)
                }
            })
            .collect();
        let lse = math::log_sum_exp(&scores);
        scores.iter().map(|s| (s - lse).exp()).collect()
    }

    /// `sum_d p(d | z) * true_risk(z, d)`.
    pub fn marginal_risk_given_latent(&self, z: &[f64]) -> f64 {
        self.diagnosis_posterior_given_latent(z)
            .iter()
            .enumerate()
            .map(|(d, p)| p * sigmoid(self.risk_score(z, DiagnosisId(d as u32))))
            .sum()
    }

    pub fn sample_latent(&self, d: DiagnosisId, rng: &mut math::Rng) -> Vec<f64> {
        self.centers[d.0 as usize]
            .iter()
            .map(|&c| c + rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn sample_features(&self, z: &[f64], rng: &mut math::Rng) -> Vec<f64> {
        let sd = self.spec.feature_noise_sd;
        self.feature_map
            .apply(z)
            .into_iter()
            .map(|x| if sd > 0.0 { x + sd * rng.sample::<f64, _>(StandardNormal) } else { x })
            .collect()
    }

    pub fn vocabulary(&self) -> Vec<Diagnosis> {
        (0..self.spec.n_diagnoses as u32)
            .map(|i| Diagnosis {
                id: DiagnosisId(i),
                name: format!("dx{i}"),
            })
            .collect()
    }
}

/// Samples a cohort; identical specs (including the seed) give identical cohorts.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    let model = GenerativeModel::new(spec)?;
    let mut rng = math::rng(spec.seed, 1);
    let prior = WeightedIndex::new(&model.prior)
        .map_err(|e| Error::invalid("diagnosis_prior", e.to_string()))?;
    let mut records = Vec::with_capacity(spec.n_patients);
    for i in 0..spec.n_patients {
        let d = DiagnosisId(prior.sample(&mut rng) as u32);
        let z = model.sample_latent(d, &mut rng);
        let x = model.sample_features(&z, &mut rng);
        let y = rng.random_bool(sigmoid(model.risk_score(&z, d)));
        records.push(PatientRecord {
            id: format!("p{i:06}"),
            features: x,
            diagnosis: Some(d),
            outcome: y,
            latent_state: Some(z),
        });
    }
    let schema = FeatureSchema::from_rows(spec.n_features, records.iter().map(|r| r.features.as_slice()));
    Cohort::new(schema, records, model.vocabulary())
}

/// Ground-truth `sigmoid(risk_weights . z + baseline + beta_true(d))`.
pub fn true_risk(spec: &CohortSpec, latent_state: &[f64], diagnosis: DiagnosisId) -> Result<f64> {
    if diagnosis.0 as usize >= spec.n_diagnoses {
        return Err(Error::UnknownDiagnosis(diagnosis));
    }
    if latent_state.len() != spec.risk_weights.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.risk_weights.len(),
            got: latent_state.len(),
        });
    }
    Ok(sigmoid(
        math::dot(&spec.risk_weights, latent_state) + spec.baseline_logit + spec.beta(diagnosis),
    ))
}

/// Ready-made specs used by the CLI, the experiments and the acceptance suite.
pub mod presets {
    use super::*;

    /// Long-tailed diagnosis prior resembling a hospital registry.
    pub fn registry(n_patients: usize, n_diagnoses: usize, seed: u64) -> CohortSpec {
        CohortSpec {
            n_patients,
            n_diagnoses,
            seed,
            ..CohortSpec::default()
        }
    }

    /// Benign/risky pair sharing one latent centre (`beta` -2 / +2) with the
    /// risky member holding 10% of the prior, plus two distinguishable diagnoses.
    /// The pair sits where the shared latent logit is +1, so the risky member is
    /// high-mortality; the other two sit 5 units away along the zero-risk direction.
    pub fn confusable(n_patients: usize, seed: u64) -> CohortSpec {
        CohortSpec {
            n_patients,
            n_features: 2,
            latent_dim: 2,
            n_diagnoses: 4,
            diagnosis_prior: Some(vec![0.45, 0.10, 0.25, 0.20]),
            confusable_pairs: vec![ConfusablePair {
                a: DiagnosisId(0),
                b: DiagnosisId(1),
                separation: 0.0,
            }],
            beta_true: [(DiagnosisId(0), -2.0), (DiagnosisId(1), 2.0)].into_iter().collect(),
            risk_weights: vec![0.8, -0.6],
            baseline_logit: 0.0,
            feature_noise_sd: 0.05,
            diagnosis_spread: 5.0,
            diagnosis_centers: Some(vec![vec![0.8, -0.6], vec![0.8, -0.6], vec![3.8, 3.4], vec![-2.2, -4.6]]),
            seed,
            ..CohortSpec::default()
        }
    }

    /// Risk shared across diagnoses through the latent state, strongly
    /// nonlinear in the observed features: one saturating feature per latent
    /// coordinate, so the logit is a sum of curved functions of the features.
    pub fn nonlinear(n_patients: usize, seed: u64) -> CohortSpec {
        CohortSpec {
            n_patients,
            n_features: 3,
            latent_dim: 3,
            n_diagnoses: 6,
            zipf_exponent: 0.8,
            risk_weights: vec![2.0, -1.6, 1.2],
            baseline_logit: -1.5,
            feature_noise_sd: 0.05,
            diagnosis_spread: 1.0,
            seed,
            ..CohortSpec::default()
        }
    }

    /// Risk fully transferable across diagnoses: shared weights, no offsets,
    /// and one latent distribution for every diagnosis. With distinct centres
    /// a finite-sample fit that shrinks toward the pooled base rate is
    /// miscalibrated on diagnoses whose centre sits away from the pool.
    pub fn transferable(n_patients: usize, n_diagnoses: usize, seed: u64) -> CohortSpec {
        CohortSpec {
            n_patients,
            n_features: 6,
            latent_dim: 3,
            n_diagnoses,
            zipf_exponent: 0.5,
            risk_weights: vec![1.0, -0.8, 0.6],
            baseline_logit: -1.8,
            feature_noise_sd: 0.2,
            diagnosis_spread: 0.0,
            seed,
            ..CohortSpec::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zipf_prior_is_normalised_and_decreasing() {
        let p = zipf_prior(3000, 1.2);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn validation_names_the_offending_field() {
        let mut spec = CohortSpec::default();
        spec.feature_noise_sd = -1.0;
        match spec.validate() {
            Err(Error::InvalidSpec { field, .. }) => assert_eq!(field, "feature_noise_sd"),
            other => panic!("unexpected {other:?}"),
        }
        let mut spec = CohortSpec::default();
        spec.beta_true.insert(DiagnosisId(99), 1.0);
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec { field: "beta_true", .. })));
        let mut spec = CohortSpec::default();
        spec.confusable_pairs.push(ConfusablePair { a: DiagnosisId(0), b: DiagnosisId(20), separation: 0.0 });
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec { field: "confusable_pairs", .. })));
    }

    #[test]
    fn true_risk_closed_forms() {
        let mut spec = CohortSpec { latent_dim: 2, risk_weights: vec![1.0, -1.0], baseline_logit: 0.0, ..CohortSpec::default() };
        assert_eq!(true_risk(&spec, &[0.3, 0.3], DiagnosisId(0)).unwrap(), 0.5);
        spec.beta_true.insert(DiagnosisId(1), 2.0);
        let r = true_risk(&spec, &[0.0, 0.0], DiagnosisId(1)).unwrap();
        assert!((r - 0.880_797_077_977_882_3).abs() < 1e-12);
        assert!(matches!(true_risk(&spec, &[0.0, 0.0], DiagnosisId(20)), Err(Error::UnknownDiagnosis(_))));
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = CohortSpec { n_patients: 300, seed: 5, ..CohortSpec::default() };
        let a = generate_cohort(&spec).unwrap();
        let b = generate_cohort(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_cohort(&CohortSpec { seed: 6, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn confusable_pair_shares_centre() {
        let model = GenerativeModel::new(&presets::confusable(10, 1)).unwrap();
        assert_eq!(model.centers[0], model.centers[1]);
        assert_ne!(model.centers[0], model.centers[2]);
    }

    #[test]
    fn constant_risk_cohort_has_half_mortality() {
        let spec = CohortSpec {
            n_patients: 4000,
            n_diagnoses: 1,
            risk_weights: vec![0.0; 4],
            baseline_logit: 0.0,
            beta_true: [(DiagnosisId(0), 0.0)].into_iter().collect(),
            seed: 2,
            ..CohortSpec::default()
        };
        let c = generate_cohort(&spec).unwrap();
        for r in &c.records {
            assert_eq!(true_risk(&spec, r.latent_state.as_ref().unwrap(), DiagnosisId(0)).unwrap(), 0.5);
        }
        let sigma = (0.25f64 / 4000.0).sqrt();
        assert!((c.mortality_rate() - 0.5).abs() <= 3.0 * sigma);
    }

    #[test]
    fn noiseless_features_determine_latent_state() {
        for kind in [FeatureMapKind::Monotone, FeatureMapKind::Identity] {
            let spec = CohortSpec {
                n_patients: 200,
                n_features: 3,
                latent_dim: 3,
                risk_weights: vec![0.5, 1.0, -0.5],
                feature_noise_sd: 0.0,
                feature_map: kind,
                seed: 9,
                ..CohortSpec::default()
            };
            let model = GenerativeModel::new(&spec).unwrap();
            let c = generate_cohort(&spec).unwrap();
            for r in &c.records {
                let z = model.feature_map.invert(&r.features, 3);
                let truth = r.latent_state.as_ref().unwrap();
                for (a, b) in z.iter().zip(truth) {
                    assert!((a - b).abs() < 1e-9);
                }
                let d = r.diagnosis.unwrap();
                assert!((model.true_risk(&z, d).unwrap() - model.true_risk(truth, d).unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = presets::confusable(100, 3);
        let s = serde_json::to_string(&spec).unwrap();
        let back: CohortSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(spec, back);
    }
}
