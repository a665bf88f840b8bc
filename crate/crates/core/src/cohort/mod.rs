//! Patient cohorts: the `(x, d, y)` records both models are trained on.
//!
//! Synthetic cohorts come from [`generate_cohort`], which samples a latent
//! patient state, a diagnosis, noisy features and an outcome with known ground
//! truth. [`true_risk`] and the [`oracle`] functions expose that ground truth to
//! tests and experiments.

mod generate;
mod io;
pub mod oracle;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

pub use generate::{
    generate_cohort, presets, true_risk, zipf_prior, ConfusablePair, CohortSpec, FeatureMap,
    FeatureMapKind, GenerativeModel, MonotoneFeature,
};
pub use io::{load_cohort, read_cohort, save_cohort, write_cohort};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiagnosisId(pub u32);

impl fmt::Display for DiagnosisId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub id: DiagnosisId,
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    /// Observed `(min, max)` per feature; informational.
    pub ranges: Vec<(f64, f64)>,
}

impl FeatureSchema {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Schema with generic names and ranges taken from `rows`.
    pub fn from_rows<'a>(n_features: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); n_features];
        for row in rows {
            for (r, &v) in ranges.iter_mut().zip(row) {
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
        for r in &mut ranges {
            if r.0 > r.1 {
                *r = (0.0, 0.0);
            }
        }
        FeatureSchema {
            names: (0..n_features).map(|j| format!("x{j}")).collect(),
            ranges,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub features: Vec<f64>,
    pub diagnosis: Option<DiagnosisId>,
    pub outcome: bool,
    /// Ground-truth latent state; only present in synthetic cohorts.
    pub latent_state: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub schema: FeatureSchema,
    pub records: Vec<PatientRecord>,
    pub diagnosis_vocab: Vec<Diagnosis>,
}

impl Cohort {
    /// Builds a cohort after checking feature lengths, vocabulary membership
    /// and id uniqueness.
    pub fn new(
        schema: FeatureSchema,
        records: Vec<PatientRecord>,
        diagnosis_vocab: Vec<Diagnosis>,
    ) -> Result<Self> {
        let cohort = Cohort {
            schema,
            records,
            diagnosis_vocab,
        };
        cohort.validate()?;
        Ok(cohort)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema.ranges.len() != self.schema.names.len() {
            return Err(Error::Schema(format!(
                "{} feature names but {} ranges",
                self.schema.names.len(),
                self.schema.ranges.len()
            )));
        }
        let vocab: HashSet<DiagnosisId> = self.diagnosis_vocab.iter().map(|d| d.id).collect();
        if vocab.len() != self.diagnosis_vocab.len() {
            return Err(Error::Schema("duplicate diagnosis id in vocabulary".into()));
        }
        let mut ids = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if r.features.len() != self.schema.len() {
                return Err(Error::Schema(format!(
                    "record {} has {} features, schema has {}",
                    r.id,
                    r.features.len(),
                    self.schema.len()
                )));
            }
            if let Some(d) = r.diagnosis {
                if !vocab.contains(&d) {
                    return Err(Error::Schema(format!(
                        "record {} has diagnosis {d} which is not in the vocabulary",
                        r.id
                    )));
                }
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Schema(format!("duplicate record id {}", r.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn vocab_ids(&self) -> Vec<DiagnosisId> {
        self.diagnosis_vocab.iter().map(|d| d.id).collect()
    }

    pub fn vocab_index(&self) -> HashMap<DiagnosisId, usize> {
        self.diagnosis_vocab
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id, i))
            .collect()
    }

    pub fn outcomes(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.outcome).collect()
    }

    pub fn mortality_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.outcome).count() as f64 / self.records.len() as f64
    }

    pub fn find(&self, id: &str) -> Option<&PatientRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Cohort over the same schema and vocabulary holding `records`.
    pub fn with_records(&self, records: Vec<PatientRecord>) -> Cohort {
        Cohort {
            schema: self.schema.clone(),
            records,
            diagnosis_vocab: self.diagnosis_vocab.clone(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Cohort {
        self.with_records(indices.iter().map(|&i| self.records[i].clone()).collect())
    }

    pub fn filter(&self, mut keep: impl FnMut(&PatientRecord) -> bool) -> Cohort {
        self.with_records(self.records.iter().filter(|r| keep(r)).cloned().collect())
    }

    /// Keeps only records whose diagnosis is in `ids` and narrows the
    /// vocabulary to those ids (in vocabulary order).
    pub fn restrict_to_diagnoses(&self, ids: &[DiagnosisId]) -> Cohort {
        let keep: HashSet<DiagnosisId> = ids.iter().copied().collect();
        Cohort {
            schema: self.schema.clone(),
            records: self
                .records
                .iter()
                .filter(|r| r.diagnosis.is_some_and(|d| keep.contains(&d)))
                .cloned()
                .collect(),
            diagnosis_vocab: self
                .diagnosis_vocab
                .iter()
                .filter(|d| keep.contains(&d.id))
                .cloned()
                .collect(),
        }
    }

    /// Concatenation of two cohorts sharing a schema and vocabulary.
    pub fn concat(&self, other: &Cohort) -> Result<Cohort> {
        if self.schema.names != other.schema.names || self.diagnosis_vocab != other.diagnosis_vocab
        {
            return Err(Error::Schema(
                "cannot concatenate cohorts with different schemas".into(),
            ));
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Cohort::new(self.schema.clone(), records, self.diagnosis_vocab.clone())
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self
            .records
            .iter()
            .any(|r| r.features.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("features"));
        }
        Ok(())
    }
}

/// Stratified three-way split `(train, valid, test)`.
///
/// Records are shuffled within each outcome class and interleaved by their
/// fractional position in the class, so every prefix of the combined order
/// holds each class in proportion to within one record. Each split keeps the
/// parent order of its records.
pub fn split(cohort: &Cohort, fractions: (f64, f64, f64), seed: u64) -> Result<(Cohort, Cohort, Cohort)> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("fractions", "must be finite and non-negative"));
    }
    if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("fractions", "must sum to 1"));
    }
    let n = cohort.len();
    let n_train = (f[0] * n as f64).round() as usize;
    let n_valid = ((f[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let n_test = n - n_train - n_valid;
    for (name, (size, frac)) in ["train", "valid", "test"]
        .iter()
        .zip([n_train, n_valid, n_test].iter().zip(f))
    {
        if frac > 0.0 && *size == 0 {
            return Err(Error::InvalidInput(format!(
                "{name} split would receive 0 of {n} records"
            )));
        }
    }

    let mut rng = math::rng(seed, 0);
    let mut keyed: Vec<(f64, u8, usize)> = Vec::with_capacity(n);
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..n).filter(|&i| cohort.records[i].outcome == class).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let m = idx.len() as f64;
        for (pos, i) in idx.into_iter().enumerate() {
            keyed.push(((pos as f64 + 0.5) / m, class as u8, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut parts: [Vec<usize>; 3] = Default::default();
    for (rank, &(_, _, i)) in keyed.iter().enumerate() {
        let slot = if rank < n_train {
            0
        } else if rank < n_train + n_valid {
            1
        } else {
            2
        };
        parts[slot].push(i);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((
        cohort.subset(&parts[0]),
        cohort.subset(&parts[1]),
        cohort.subset(&parts[2]),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusEntry {
    pub diagnosis: DiagnosisId,
    pub count: usize,
    pub deaths: usize,
    pub mortality: f64,
}

/// Diagnoses with at least `min_patients` labelled records and a mortality
/// rate of at least `min_mortality`, sorted by count (descending, ties by id).
pub fn diagnosis_census(cohort: &Cohort, min_patients: usize, min_mortality: f64) -> Vec<CensusEntry> {
    let mut tally: BTreeMap<DiagnosisId, (usize, usize)> =
        cohort.diagnosis_vocab.iter().map(|d| (d.id, (0, 0))).collect();
    for r in &cohort.records {
        if let Some(d) = r.diagnosis {
            let t = tally.entry(d).or_default();
            t.0 += 1;
            t.1 += r.outcome as usize;
        }
    }
    let mut out: Vec<CensusEntry> = tally
        .into_iter()
        .map(|(diagnosis, (count, deaths))| CensusEntry {
            diagnosis,
            count,
            deaths,
            mortality: if count == 0 { 0.0 } else { deaths as f64 / count as f64 },
        })
        .filter(|e| e.count >= min_patients && e.mortality >= min_mortality)
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then(a.diagnosis.cmp(&b.diagnosis)));
    out
}
