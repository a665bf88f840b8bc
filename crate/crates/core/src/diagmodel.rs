//! Diagnosis model `g(x)`: a softmax network with two tanh hidden layers of
//! 64 units over the diagnosis vocabulary.
//!
//! Training is mini-batch gradient descent with momentum 0.9 and L2 weight
//! decay on the weights. After every epoch the full training objective is
//! evaluated; an epoch that increases it is rolled back and the learning rate
//! halved, so the recorded objective never increases. The learning rate and
//! weight decay are picked on a validation cohort, then the chosen cell is
//! retrained on train and validation combined.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Diagnosis, DiagnosisId};
use crate::error::{Error, Result};
use crate::eval::{auc, AucResult};
use crate::math::{self, Standardization};

pub const HIDDEN_UNITS: usize = 64;

/// Fully connected network stored as one flat parameter vector: for each
/// layer the row-major `out x in` weight matrix followed by the bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

fn layer_offsets(sizes: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(sizes.len() - 1);
    let mut off = 0;
    for w in sizes.windows(2) {
        let bias = off + w[0] * w[1];
        out.push((off, bias));
        off = bias + w[1];
    }
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Mlp {
    pub fn n_params(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; Self::n_params(sizes)],
        }
    }

    /// Uniform weights with variance `1 / fan_in`, zero biases.
    pub fn random(sizes: &[usize], rng: &mut math::Rng) -> Self {
        let mut m = Self::zeros(sizes);
        for ((off, bias), w) in layer_offsets(sizes).into_iter().zip(sizes.windows(2)) {
            let limit = (3.0 / w[0] as f64).sqrt();
            for p in &mut m.params[off..bias] {
                *p = rng.random_range(-limit..limit);
            }
        }
        m
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (off, bias) = layer_offsets(&self.sizes)[l];
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = ArrayView2::from_shape((n_out, n_in), &self.params[off..bias]).expect("layer shape");
        let b = ArrayView1::from(&self.params[bias..bias + n_out]);
        (w, b)
    }

    /// Activations of every layer for a batch (one row per example); the
    /// first entry is the input and the last holds the logits.
    fn forward_batch(&self, x: Array2<f64>) -> Vec<Array2<f64>> {
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x);
        for l in 0..n_layers {
            let (w, b) = self.layer(l);
            let mut z = acts[l].dot(&w.t());
            z += &b;
            if l + 1 < n_layers {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let input = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        self.forward_batch(input).pop().unwrap().into_raw_vec_and_offset().0
    }

    fn weight_penalty(&self, weight_decay: f64) -> f64 {
        if weight_decay == 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for (off, bias) in layer_offsets(&self.sizes) {
            s += self.params[off..bias].iter().map(|v| v * v).sum::<f64>();
        }
        0.5 * weight_decay * s
    }

    /// Mean cross-entropy plus `weight_decay / 2 * |W|^2`.
    pub fn objective(&self, xs: &[Vec<f64>], ys: &[usize], weight_decay: f64) -> f64 {
        mean_cross_entropy(self, xs, ys) + self.weight_penalty(weight_decay)
    }

    /// Gradient of [`Mlp::objective`] over the examples `idx`.
    pub fn gradient(&self, xs: &[Vec<f64>], ys: &[usize], idx: &[usize], weight_decay: f64) -> Vec<f64> {
        let offsets = layer_offsets(&self.sizes);
        let n_layers = offsets.len();
        let acts = self.forward_batch(batch_matrix(xs, idx, self.sizes[0]));
        let mut delta = acts[n_layers].clone();
        let scale = 1.0 / idx.len() as f64;
        for (mut row, &i) in delta.rows_mut().into_iter().zip(idx) {
            softmax_in_place(row.as_slice_mut().expect("contiguous"));
            row[ys[i]] -= 1.0;
            row *= scale;
        }
        let mut grad = vec![0.0; self.params.len()];
        for l in (0..n_layers).rev() {
            let (off, bias) = offsets[l];
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            {
                let mut gw = ArrayViewMut2::from_shape((n_out, n_in), &mut grad[off..bias]).expect("layer shape");
                general_mat_mul(1.0, &delta.t(), &acts[l], 0.0, &mut gw);
            }
            for (g, col) in grad[bias..bias + n_out].iter_mut().zip(delta.columns()) {
                *g = col.sum();
            }
            if l > 0 {
                let (w, _) = self.layer(l);
                let mut prev = delta.dot(&w);
                prev.zip_mut_with(&acts[l], |p, &a| *p *= 1.0 - a * a);
                delta = prev;
            }
        }
        if weight_decay != 0.0 {
            for (off, bias) in offsets {
                for (g, p) in grad[off..bias].iter_mut().zip(&self.params[off..bias]) {
                    *g += weight_decay * p;
                }
            }
        }
        grad
    }
}

fn batch_matrix(xs: &[Vec<f64>], idx: &[usize], n_features: usize) -> Array2<f64> {
    let mut data = Vec::with_capacity(idx.len() * n_features);
    for &i in idx {
        data.extend_from_slice(&xs[i]);
    }
    Array2::from_shape_vec((idx.len(), n_features), data).expect("batch shape")
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// Rows per forward pass when scoring a whole cohort.
const EVAL_BATCH: usize = 512;

fn mean_cross_entropy(net: &Mlp, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let idx: Vec<usize> = (0..xs.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_BATCH) {
        let z = net.forward_batch(batch_matrix(xs, chunk, net.sizes[0])).pop().unwrap();
        for (row, &i) in z.rows().into_iter().zip(chunk) {
            let row = row.as_slice().expect("contiguous");
            total += math::log_sum_exp(row) - row[ys[i]];
        }
    }
    total / xs.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_units: usize,
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_units: HIDDEN_UNITS,
            learning_rates: vec![0.1, 0.03, 0.01],
            weight_decays: vec![0.0, 1e-4, 1e-3],
            epochs: 200,
            batch_size: 128,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub valid_log_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// Accepted training objective after each epoch (non-increasing).
    pub objective: Vec<f64>,
    pub final_learning_rate: f64,
    pub rollbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpMetadata {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub valid_log_loss: f64,
    pub grid: Vec<GridPoint>,
    pub epochs: usize,
    pub batch_size: usize,
    pub final_trace: TrainingTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisModel {
    pub network: Mlp,
    pub standardization: Standardization,
    pub vocab: Vec<Diagnosis>,
    pub metadata: Option<MlpMetadata>,
}

/// `p(d | x)` over a model vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisDistribution {
    pub vocab: Vec<DiagnosisId>,
    pub probabilities: Vec<f64>,
}

impl DiagnosisDistribution {
    pub fn probability(&self, d: DiagnosisId) -> Option<f64> {
        self.vocab.iter().position(|&v| v == d).map(|i| self.probabilities[i])
    }
}

impl DiagnosisModel {
    /// Network with all parameters zero; predicts the uniform distribution.
    pub fn zeroed(n_features: usize, vocab: Vec<Diagnosis>, hidden_units: usize) -> Self {
        let sizes = [n_features, hidden_units, hidden_units, vocab.len()];
        DiagnosisModel {
            network: Mlp::zeros(&sizes),
            standardization: Standardization {
                mean: vec![0.0; n_features],
                sd: vec![1.0; n_features],
            },
            vocab,
            metadata: None,
        }
    }

    /// Model that ignores its input and always predicts `probabilities`
    /// (all positive, one per vocabulary entry).
    pub fn constant(n_features: usize, vocab: Vec<Diagnosis>, probabilities: &[f64]) -> Result<Self> {
        if probabilities.len() != vocab.len() {
            return Err(Error::DimensionMismatch {
                expected: vocab.len(),
                got: probabilities.len(),
            });
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidInput("constant diagnosis model needs positive probabilities".into()));
        }
        let mut m = Self::zeroed(n_features, vocab, 1);
        let n = m.network.params.len();
        let k = probabilities.len();
        for (b, p) in m.network.params[n - k..].iter_mut().zip(probabilities) {
            *b = p.ln();
        }
        Ok(m)
    }

    pub fn n_features(&self) -> usize {
        self.network.sizes[0]
    }

    pub fn vocab_ids(&self) -> Vec<DiagnosisId> {
        self.vocab.iter().map(|d| d.id).collect()
    }

    pub fn predict(&self, features: &[f64]) -> Result<DiagnosisDistribution> {
        if features.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        let x = self.standardization.apply(features);
        Ok(DiagnosisDistribution {
            vocab: self.vocab_ids(),
            probabilities: softmax(&self.network.logits(&x)),
        })
    }

    pub fn predict_batch(&self, rows: &[&[f64]]) -> Result<Vec<DiagnosisDistribution>> {
        rows.par_iter().map(|x| self.predict(x)).collect()
    }
}

pub fn predict_diagnosis(model: &DiagnosisModel, features: &[f64]) -> Result<DiagnosisDistribution> {
    model.predict(features)
}

/// `n` i.i.d. draws from `dist`.
pub fn sample_diagnoses(dist: &DiagnosisDistribution, n: usize, seed: u64) -> Result<Vec<DiagnosisId>> {
    let index = WeightedIndex::new(&dist.probabilities)
        .map_err(|e| Error::InvalidInput(format!("invalid diagnosis distribution: {e}")))?;
    let mut rng = math::rng(seed, 0);
    Ok((0..n).map(|_| dist.vocab[index.sample(&mut rng)]).collect())
}

fn labelled_design(cohort: &Cohort, st: &Standardization, what: &str) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let index = cohort.vocab_index();
    let mut xs = Vec::with_capacity(cohort.len());
    let mut ys = Vec::with_capacity(cohort.len());
    for r in &cohort.records {
        let d = r.diagnosis.ok_or_else(|| {
            Error::InvalidInput(format!("{what} record {} has no diagnosis", r.id))
        })?;
        ys.push(*index.get(&d).ok_or(Error::UnknownDiagnosis(d))?);
        xs.push(st.apply(&r.features));
    }
    Ok((xs, ys))
}

/// Trains one network at a fixed learning rate and weight decay.
pub fn train_network(
    xs: &[Vec<f64>],
    ys: &[usize],
    sizes: &[usize],
    learning_rate: f64,
    weight_decay: f64,
    config: &MlpConfig,
) -> (Mlp, TrainingTrace) {
    let mut init_rng = math::rng(config.seed, 0);
    let mut order_rng = math::rng(config.seed, 1);
    let mut net = Mlp::random(sizes, &mut init_rng);
    let mut velocity = vec![0.0; net.params.len()];
    let mut lr = learning_rate;
    let mut current = net.objective(xs, ys, weight_decay);
    let mut trace = TrainingTrace {
        objective: Vec::with_capacity(config.epochs),
        final_learning_rate: lr,
        rollbacks: 0,
    };
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let batch = config.batch_size.max(1);
    for _ in 0..config.epochs {
        let snapshot = net.params.clone();
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(batch) {
            let g = net.gradient(xs, ys, chunk, weight_decay);
            for ((p, v), gi) in net.params.iter_mut().zip(velocity.iter_mut()).zip(&g) {
                *v = config.momentum * *v - lr * gi;
                *p += *v;
            }
        }
        let next = net.objective(xs, ys, weight_decay);
        if next.is_finite() && next <= current {
            current = next;
        } else {
            net.params = snapshot;
            velocity.fill(0.0);
            lr *= 0.5;
            trace.rollbacks += 1;
        }
        trace.objective.push(current);
    }
    trace.final_learning_rate = lr;
    (net, trace)
}

/// Grid-searches learning rate and weight decay on `valid`, then retrains the
/// best cell on `train` and `valid` combined with the same epoch budget.
pub fn fit_mlp(train: &Cohort, valid: &Cohort, config: &MlpConfig) -> Result<DiagnosisModel> {
    if config.learning_rates.is_empty() || config.weight_decays.is_empty() {
        return Err(Error::invalid("grid", "learning_rates and weight_decays must be non-empty"));
    }
    if config.hidden_units == 0 {
        return Err(Error::invalid("hidden_units", "must be at least 1"));
    }
    if train.is_empty() {
        return Err(Error::InvalidInput("training cohort is empty".into()));
    }
    if train.diagnosis_vocab.len() < 2 {
        return Err(Error::invalid("diagnosis_vocab", "need at least two diagnoses"));
    }
    train.check_finite()?;
    valid.check_finite()?;
    let mut seen = vec![false; train.diagnosis_vocab.len()];
    let index = train.vocab_index();
    for r in &train.records {
        if let Some(i) = r.diagnosis.and_then(|d| index.get(&d)) {
            seen[*i] = true;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidInput(format!(
            "diagnosis {} in the vocabulary has no training records",
            train.diagnosis_vocab[i].id
        )));
    }

    let n_features = train.n_features();
    let sizes = [n_features, config.hidden_units, config.hidden_units, train.diagnosis_vocab.len()];
    let st = Standardization::fit(n_features, train.records.iter().map(|r| r.features.as_slice()));
    let (xs, ys) = labelled_design(train, &st, "training")?;

    let cells: Vec<(f64, f64)> = config
        .learning_rates
        .iter()
        .flat_map(|&lr| config.weight_decays.iter().map(move |&wd| (lr, wd)))
        .collect();
    let grid: Vec<GridPoint> = if valid.is_empty() {
        cells
            .iter()
            .map(|&(learning_rate, weight_decay)| GridPoint {
                learning_rate,
                weight_decay,
                valid_log_loss: f64::NAN,
            })
            .collect()
    } else {
        let (vx, vy) = labelled_design(valid, &st, "validation")?;
        cells
            .par_iter()
            .map(|&(learning_rate, weight_decay)| {
                let (net, _) = train_network(&xs, &ys, &sizes, learning_rate, weight_decay, config);
                GridPoint {
                    learning_rate,
                    weight_decay,
                    valid_log_loss: mean_cross_entropy(&net, &vx, &vy),
                }
            })
            .collect()
    };
    let best = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.valid_log_loss.total_cmp(&b.1.valid_log_loss).then(a.0.cmp(&b.0)))
        .map(|(_, g)| g.clone())
        .expect("non-empty grid");

    let combined = if valid.is_empty() { train.clone() } else { train.concat(valid)? };
    let st = Standardization::fit(n_features, combined.records.iter().map(|r| r.features.as_slice()));
    let (xs, ys) = labelled_design(&combined, &st, "training")?;
    let (network, final_trace) =
        train_network(&xs, &ys, &sizes, best.learning_rate, best.weight_decay, config);

    Ok(DiagnosisModel {
        network,
        standardization: st,
        vocab: train.diagnosis_vocab.clone(),
        metadata: Some(MlpMetadata {
            learning_rate: best.learning_rate,
            weight_decay: best.weight_decay,
            valid_log_loss: best.valid_log_loss,
            grid,
            epochs: config.epochs,
            batch_size: config.batch_size,
            final_trace,
        }),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAuc {
    pub diagnosis: DiagnosisId,
    pub n_positive: usize,
    /// `None` when the class has no positives or no negatives in the test cohort.
    pub auc: Option<AucResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneVsAllAuc {
    pub per_class: Vec<ClassAuc>,
    pub macro_auc: Option<f64>,
}

/// One-vs-all AUC of `p(c | x)` against `d == c` for every vocabulary class.
pub fn one_vs_all_auc(model: &DiagnosisModel, test: &Cohort) -> Result<OneVsAllAuc> {
    let labels: Vec<DiagnosisId> = test
        .records
        .iter()
        .map(|r| r.diagnosis.ok_or_else(|| Error::InvalidInput(format!("test record {} has no diagnosis", r.id))))
        .collect::<Result<_>>()?;
    let rows: Vec<&[f64]> = test.records.iter().map(|r| r.features.as_slice()).collect();
    let dists = model.predict_batch(&rows)?;
    let per_class: Vec<ClassAuc> = model
        .vocab
        .iter()
        .enumerate()
        .map(|(c, d)| {
            let scores: Vec<f64> = dists.iter().map(|p| p.probabilities[c]).collect();
            let is_pos: Vec<bool> = labels.iter().map(|&l| l == d.id).collect();
            let n_positive = is_pos.iter().filter(|&&b| b).count();
            ClassAuc {
                diagnosis: d.id,
                n_positive,
                auc: auc(&scores, &is_pos).ok(),
            }
        })
        .collect();
    let evaluable: Vec<f64> = per_class.iter().filter_map(|c| c.auc.as_ref().map(|a| a.auc)).collect();
    let macro_auc = if evaluable.is_empty() {
        None
    } else {
        Some(evaluable.iter().sum::<f64>() / evaluable.len() as f64)
    };
    Ok(OneVsAllAuc { per_class, macro_auc })
}
