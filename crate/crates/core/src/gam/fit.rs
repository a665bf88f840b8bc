use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binning::{bin_features, BinningSpec};
use super::{BoostingTrace, DiagnosisOffset, GamMetadata, GamModel, ShapeFunction};
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::math::{self, log_loss_from_score, sigmoid};

/// Bin index marking "no diagnosis" in the categorical term.
const NO_BIN: u16 = u16::MAX;
/// Per-bag Newton steps are clipped to this magnitude (log-odds).
const MAX_STEP: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GamConfig {
    /// Add the per-diagnosis offset term `beta(d)`.
    pub use_diagnosis: bool,
    pub inner_bags: usize,
    pub outer_bags: usize,
    pub learning_rate: f64,
    pub max_rounds: usize,
    /// Rounds without validation improvement before stopping; `None` runs `max_rounds`.
    pub patience: Option<usize>,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for GamConfig {
    fn default() -> Self {
        GamConfig {
            use_diagnosis: false,
            inner_bags: 16,
            outer_bags: 4,
            learning_rate: 0.05,
            max_rounds: 2000,
            patience: Some(50),
            max_bins: 32,
            seed: 0,
        }
    }
}

impl GamConfig {
    fn validate(&self) -> Result<()> {
        if self.inner_bags == 0 {
            return Err(Error::invalid("inner_bags", "must be at least 1"));
        }
        if self.outer_bags == 0 {
            return Err(Error::invalid("outer_bags", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.max_bins < 2 || self.max_bins >= NO_BIN as usize {
            return Err(Error::invalid("max_bins", "must be in 2..65535"));
        }
        Ok(())
    }
}

/// Binned training and validation data shared by all bags.
struct Prepared {
    n_bins: Vec<usize>,
    train_bins: Vec<Vec<u16>>,
    train_y: Vec<bool>,
    valid_bins: Vec<Vec<u16>>,
    valid_y: Vec<bool>,
}

fn bin_cohort(cohort: &Cohort, binning: &BinningSpec, use_diagnosis: bool) -> Vec<Vec<u16>> {
    let mut terms: Vec<Vec<u16>> = (0..binning.n_features())
        .map(|j| {
            cohort
                .records
                .iter()
                .map(|r| binning.bin(j, r.features[j]) as u16)
                .collect()
        })
        .collect();
    if use_diagnosis {
        let index = cohort.vocab_index();
        terms.push(
            cohort
                .records
                .iter()
                .map(|r| r.diagnosis.and_then(|d| index.get(&d)).map_or(NO_BIN, |&i| i as u16))
                .collect(),
        );
    }
    terms
}

fn valid_loss(scores: &[f64], y: &[bool]) -> f64 {
    scores
        .iter()
        .zip(y)
        .map(|(&s, &y)| log_loss_from_score(s, y))
        .sum::<f64>()
        / y.len() as f64
}

/// One outer bag: a bootstrap resample of the training rows with fixed
/// inner-bag bootstrap counts.
struct Bag {
    bins: Vec<Vec<u16>>,
    y: Vec<f64>,
    /// Row-major `rows x inner_bags` bootstrap counts.
    weights: Vec<u16>,
    intercept: f64,
    terms: Vec<Vec<f64>>,
    scores: Vec<f64>,
    /// Scores on every original training row, for the ensemble intercept.
    train_scores: Vec<f64>,
    valid_scores: Vec<f64>,
}

impl Bag {
    fn new(prep: &Prepared, config: &GamConfig, bag: usize) -> Bag {
        let mut rng = math::rng(config.seed, 1000 + bag as u64);
        let n = prep.train_y.len();

        // A single bag uses the data as given; several bags bootstrap it.
        let mut rows: Vec<usize> = if config.outer_bags > 1 {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        rows.sort_unstable();
        let m = rows.len();

        let n_inner = config.inner_bags;
        let mut weights = vec![0u16; m * n_inner];
        if n_inner > 1 {
            for b in 0..n_inner {
                for _ in 0..m {
                    weights[rng.random_range(0..m) * n_inner + b] += 1;
                }
            }
        } else {
            weights.fill(1);
        }

        let bins: Vec<Vec<u16>> = prep
            .train_bins
            .iter()
            .map(|t| rows.iter().map(|&r| t[r]).collect())
            .collect();
        let y: Vec<f64> = rows.iter().map(|&r| prep.train_y[r] as u8 as f64).collect();
        let base = (y.iter().sum::<f64>() / m as f64).clamp(1e-6, 1.0 - 1e-6);
        let intercept = math::logit(base);
        Bag {
            bins,
            y,
            weights,
            intercept,
            terms: prep.n_bins.iter().map(|&k| vec![0.0; k]).collect(),
            scores: vec![intercept; m],
            train_scores: vec![intercept; prep.train_y.len()],
            valid_scores: vec![intercept; prep.valid_y.len()],
        }
    }

    /// One cyclic pass over every term.
    fn round(&mut self, prep: &Prepared, config: &GamConfig) {
        let n_inner = config.inner_bags;
        let m = self.y.len();
        for (t, term) in self.terms.iter_mut().enumerate() {
            let nb = term.len();
            // Bin-major so the per-row inner-bag loop is contiguous.
            let mut grad = vec![0.0; nb * n_inner];
            let mut hess = vec![0.0; nb * n_inner];
            let tb = &self.bins[t];
            for i in 0..m {
                let k = tb[i];
                if k == NO_BIN {
                    continue;
                }
                let k = k as usize;
                let p = sigmoid(self.scores[i]);
                let g = self.y[i] - p;
                let h = p * (1.0 - p);
                let w = &self.weights[i * n_inner..(i + 1) * n_inner];
                let gk = &mut grad[k * n_inner..(k + 1) * n_inner];
                for (acc, &c) in gk.iter_mut().zip(w) {
                    *acc += c as f64 * g;
                }
                let hk = &mut hess[k * n_inner..(k + 1) * n_inner];
                for (acc, &c) in hk.iter_mut().zip(w) {
                    *acc += c as f64 * h;
                }
            }
            let update: Vec<f64> = (0..nb)
                .map(|k| {
                    let mut acc = 0.0;
                    for b in 0..n_inner {
                        let h = hess[k * n_inner + b];
                        if h > 0.0 {
                            acc += (grad[k * n_inner + b] / h).clamp(-MAX_STEP, MAX_STEP);
                        }
                    }
                    config.learning_rate * acc / n_inner as f64
                })
                .collect();
            for (c, u) in term.iter_mut().zip(&update) {
                *c += u;
            }
            for (s, &k) in self.scores.iter_mut().zip(tb) {
                if k != NO_BIN {
                    *s += update[k as usize];
                }
            }
            for (scores, bins) in [(&mut self.train_scores, &prep.train_bins[t]), (&mut self.valid_scores, &prep.valid_bins[t])] {
                for (s, &k) in scores.iter_mut().zip(bins) {
                    if k != NO_BIN {
                        *s += update[k as usize];
                    }
                }
            }
        }
        // A full Newton step on the intercept keeps the bag's mean prediction
        // at its base rate even when boosting stops far from convergence.
        let (mut g, mut h) = (0.0, 0.0);
        for (&s, &y) in self.scores.iter().zip(&self.y) {
            let p = sigmoid(s);
            g += y - p;
            h += p * (1.0 - p);
        }
        if h > 0.0 {
            let step = (g / h).clamp(-MAX_STEP, MAX_STEP);
            self.intercept += step;
            for s in self.scores.iter_mut().chain(&mut self.train_scores).chain(&mut self.valid_scores) {
                *s += step;
            }
        }
    }
}

/// Bag-averaged intercept and terms.
fn average(bags: &[Bag]) -> (f64, Vec<Vec<f64>>) {
    let nbags = bags.len() as f64;
    let intercept = bags.iter().map(|b| b.intercept).sum::<f64>() / nbags;
    let mut terms: Vec<Vec<f64>> = bags[0].terms.iter().map(|t| vec![0.0; t.len()]).collect();
    for bag in bags {
        for (acc, t) in terms.iter_mut().zip(&bag.terms) {
            for (a, v) in acc.iter_mut().zip(t) {
                *a += v / nbags;
            }
        }
    }
    (intercept, terms)
}

fn mean_scores(bags: &[Bag], scores: impl Fn(&Bag) -> &[f64]) -> Vec<f64> {
    let nbags = bags.len() as f64;
    let mut out = vec![0.0; scores(&bags[0]).len()];
    for b in bags {
        for (o, s) in out.iter_mut().zip(scores(b)) {
            *o += s / nbags;
        }
    }
    out
}

/// Intercept shift that makes the bag-averaged model's mean prediction on
/// `train` equal its outcome rate. Averaging on the logit scale breaks this
/// even when every bag satisfies it.
fn ensemble_shift(bags: &[Bag], y: &[bool]) -> f64 {
    let scores = mean_scores(bags, |b| &b.train_scores);
    let mut shift = 0.0;
    for _ in 0..50 {
        let (mut g, mut h) = (0.0, 0.0);
        for (&s, &y) in scores.iter().zip(y) {
            let p = sigmoid(s + shift);
            g += y as u8 as f64 - p;
            h += p * (1.0 - p);
        }
        if h <= 0.0 {
            break;
        }
        let step = (g / h).clamp(-MAX_STEP, MAX_STEP);
        shift += step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    shift
}

fn ensemble_valid_loss(bags: &[Bag], shift: f64, y: &[bool]) -> f64 {
    let scores: Vec<f64> = mean_scores(bags, |b| &b.valid_scores).into_iter().map(|s| s + shift).collect();
    valid_loss(&scores, y)
}

/// Bag average with its calibrating intercept shift applied.
fn calibrated_average(bags: &[Bag], y: &[bool]) -> (f64, Vec<Vec<f64>>, f64) {
    let shift = ensemble_shift(bags, y);
    let (intercept, terms) = average(bags);
    (intercept + shift, terms, shift)
}

/// Fits the additive model by cyclic boosting on the log-loss.
///
/// Each round visits every feature, then the diagnosis term, and adds
/// `learning_rate` times the inner-bag average of the bin-wise Newton step
/// (the IRLS-weighted mean working residual), then takes a Newton step on
/// the intercept. Inner bags are bootstrap
/// resamples drawn once per outer bag. Outer bags are fits on bootstrap
/// resamples of `train`, advanced in lockstep and averaged in bag order; the
/// returned model is the average at the round with the lowest validation
/// loss, with its intercept shifted so the mean prediction on `train` matches
/// the outcome rate. The average is centred so every shape function and the offsets have
/// zero mean over `train`.
pub fn fit_gam(train: &Cohort, valid: &Cohort, config: &GamConfig) -> Result<GamModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("training cohort is empty".into()));
    }
    if valid.n_features() != train.n_features() {
        return Err(Error::DimensionMismatch {
            expected: train.n_features(),
            got: valid.n_features(),
        });
    }
    if valid.is_empty() && config.patience.is_some() {
        return Err(Error::InvalidInput(
            "early stopping needs a non-empty validation cohort".into(),
        ));
    }
    valid.check_finite()?;
    if config.use_diagnosis {
        if let Some(r) = train.records.iter().find(|r| r.diagnosis.is_none()) {
            return Err(Error::InvalidInput(format!(
                "record {} has no diagnosis but the model uses a diagnosis term",
                r.id
            )));
        }
        if train.diagnosis_vocab.is_empty() || train.diagnosis_vocab.len() >= NO_BIN as usize {
            return Err(Error::invalid("diagnosis_vocab", "must hold 1..65535 diagnoses"));
        }
    }

    let binning = bin_features(train, config.max_bins)?;
    let mut n_bins: Vec<usize> = (0..binning.n_features()).map(|j| binning.n_bins(j)).collect();
    if config.use_diagnosis {
        n_bins.push(train.diagnosis_vocab.len());
    }
    let prep = Prepared {
        n_bins,
        train_bins: bin_cohort(train, &binning, config.use_diagnosis),
        train_y: train.outcomes(),
        valid_bins: bin_cohort(valid, &binning, config.use_diagnosis),
        valid_y: valid.outcomes(),
    };

    let mut bags: Vec<Bag> = (0..config.outer_bags)
        .into_par_iter()
        .map(|b| Bag::new(&prep, config, b))
        .collect();

    // Bags advance in lockstep; early stopping watches the averaged model.
    let has_valid = !prep.valid_y.is_empty();
    let mut trace = BoostingTrace::default();
    let (mut intercept, mut terms, shift) = calibrated_average(&bags, &prep.train_y);
    if has_valid {
        let l0 = ensemble_valid_loss(&bags, shift, &prep.valid_y);
        trace.valid_loss_trace.push(l0);
        trace.best_valid_loss = Some(l0);
    }
    for round in 1..=config.max_rounds {
        bags.par_iter_mut().for_each(|b| b.round(&prep, config));
        trace.rounds_run = round;
        if !has_valid {
            continue;
        }
        let (i, t, shift) = calibrated_average(&bags, &prep.train_y);
        let loss = ensemble_valid_loss(&bags, shift, &prep.valid_y);
        trace.valid_loss_trace.push(loss);
        if trace.best_valid_loss.is_none_or(|best| loss < best) {
            trace.best_valid_loss = Some(loss);
            trace.best_round = round;
            (intercept, terms) = (i, t);
        } else if config.patience.is_some_and(|p| round - trace.best_round >= p) {
            break;
        }
    }
    if !has_valid {
        trace.best_round = trace.rounds_run;
        (intercept, terms, _) = calibrated_average(&bags, &prep.train_y);
    }

    let n = train.len() as f64;
    let mut counts: Vec<Vec<usize>> = prep.n_bins.iter().map(|&k| vec![0; k]).collect();
    for (c, tb) in counts.iter_mut().zip(&prep.train_bins) {
        for &k in tb {
            if k != NO_BIN {
                c[k as usize] += 1;
            }
        }
    }
    for (term, c) in terms.iter_mut().zip(&counts) {
        let mean = term.iter().zip(c).map(|(v, &k)| v * k as f64).sum::<f64>() / n;
        for v in term.iter_mut() {
            *v -= mean;
        }
        intercept += mean;
    }

    let n_features = binning.n_features();
    let (diagnosis_offsets, diagnosis_vocab) = if config.use_diagnosis {
        let offsets = train
            .diagnosis_vocab
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[n_features][*i] > 0)
            .map(|(i, d)| DiagnosisOffset {
                diagnosis: d.id,
                offset: terms[n_features][i],
                count: counts[n_features][i],
            })
            .collect::<Vec<_>>();
        let mut offsets = offsets;
        offsets.sort_by_key(|o| o.diagnosis);
        (offsets, train.vocab_ids())
    } else {
        (Vec::new(), Vec::new())
    };

    let shapes = terms
        .into_iter()
        .zip(counts)
        .take(n_features)
        .enumerate()
        .map(|(feature, (contributions, bin_counts))| ShapeFunction {
            feature,
            contributions,
            bin_counts,
        })
        .collect();

    Ok(GamModel {
        intercept,
        shapes,
        diagnosis_offsets,
        diagnosis_vocab,
        binning,
        metadata: GamMetadata {
            inner_bags: config.inner_bags,
            outer_bags: config.outer_bags,
            learning_rate: config.learning_rate,
            trace,
        },
    })
}
