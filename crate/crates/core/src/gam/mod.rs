//! Additive outcome model `p(y = 1 | x, d) = sigmoid(b + sum_j f_j(x_j) + beta(d))`.
//!
//! Each `f_j` is a step function over equal-frequency bins, learned by cyclic
//! gradient boosting with inner and outer bagging ([`fit_gam`]). Without a
//! diagnosis term the same model is the all-cause model.

mod binning;
mod fit;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::DiagnosisId;
use crate::error::{Error, Result};
use crate::math::sigmoid;

pub use binning::{bin_features, feature_cuts, BinningSpec};
pub use fit::{fit_gam, GamConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeFunction {
    pub feature: usize,
    pub contributions: Vec<f64>,
    /// Training records per bin; weights for the centring invariant.
    pub bin_counts: Vec<usize>,
}

/// Boosting progress of the bag-averaged model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoostingTrace {
    pub rounds_run: usize,
    /// Round whose parameters the model holds (0 = intercept only).
    pub best_round: usize,
    /// Validation log-loss at `best_round`; `None` without a validation cohort.
    pub best_valid_loss: Option<f64>,
    /// Validation log-loss after each round, starting with round 0.
    pub valid_loss_trace: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GamMetadata {
    pub inner_bags: usize,
    pub outer_bags: usize,
    pub learning_rate: f64,
    pub trace: BoostingTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisOffset {
    pub diagnosis: DiagnosisId,
    pub offset: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GamModel {
    pub intercept: f64,
    pub shapes: Vec<ShapeFunction>,
    /// `beta(d)` for every diagnosis seen in training; empty for an all-cause model.
    pub diagnosis_offsets: Vec<DiagnosisOffset>,
    /// Vocabulary the diagnosis term was fit against (empty without one).
    pub diagnosis_vocab: Vec<DiagnosisId>,
    pub binning: BinningSpec,
    pub metadata: GamMetadata,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GamPrediction {
    pub probability: f64,
    pub score: f64,
    /// The diagnosis had no fitted offset; `beta = 0` was used.
    pub unseen_diagnosis: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeBin {
    /// Exclusive lower edge; `None` for the first bin.
    pub lower: Option<f64>,
    /// Inclusive upper edge; `None` for the last bin.
    pub upper: Option<f64>,
    pub contribution: f64,
    pub count: usize,
}

impl GamModel {
    /// Model with all-zero shape functions over `binning`.
    pub fn constant(binning: BinningSpec, intercept: f64) -> Self {
        let shapes = (0..binning.n_features())
            .map(|j| ShapeFunction {
                feature: j,
                contributions: vec![0.0; binning.n_bins(j)],
                bin_counts: vec![0; binning.n_bins(j)],
            })
            .collect();
        GamModel {
            intercept,
            shapes,
            diagnosis_offsets: Vec::new(),
            diagnosis_vocab: Vec::new(),
            binning,
            metadata: GamMetadata::default(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.shapes.len()
    }

    pub fn has_diagnosis_term(&self) -> bool {
        !self.diagnosis_offsets.is_empty()
    }

    pub fn offset(&self, d: DiagnosisId) -> Option<f64> {
        self.diagnosis_offsets
            .binary_search_by(|o| o.diagnosis.cmp(&d))
            .ok()
            .map(|i| self.diagnosis_offsets[i].offset)
    }

    pub fn offsets(&self) -> BTreeMap<DiagnosisId, f64> {
        self.diagnosis_offsets.iter().map(|o| (o.diagnosis, o.offset)).collect()
    }

    /// `intercept + sum_j f_j(x_j)`, the score without the diagnosis term.
    pub fn feature_score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.shapes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.shapes.len(),
                got: features.len(),
            });
        }
        if features.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("features"));
        }
        let mut s = self.intercept;
        for (shape, &x) in self.shapes.iter().zip(features) {
            s += shape.contributions[self.binning.bin(shape.feature, x)];
        }
        Ok(s)
    }

    /// Risk for `features` under `diagnosis`. Without a diagnosis (or for a
    /// model without offsets) the marginal score with `beta = 0` is used.
    pub fn predict(&self, features: &[f64], diagnosis: Option<DiagnosisId>) -> Result<GamPrediction> {
        let base = self.feature_score(features)?;
        Ok(self.predict_from_feature_score(base, diagnosis))
    }

    pub(crate) fn predict_from_feature_score(&self, base: f64, diagnosis: Option<DiagnosisId>) -> GamPrediction {
        let (beta, unseen) = match diagnosis {
            Some(d) if self.has_diagnosis_term() => match self.offset(d) {
                Some(b) => (b, false),
                None => (0.0, true),
            },
            _ => (0.0, false),
        };
        let score = base + beta;
        GamPrediction {
            probability: sigmoid(score),
            score,
            unseen_diagnosis: unseen,
        }
    }

    /// The learned step function for `feature`.
    pub fn shape_curve(&self, feature: usize) -> Result<Vec<ShapeBin>> {
        let shape = self.shapes.get(feature).ok_or_else(|| {
            Error::InvalidInput(format!(
                "feature index {feature} out of range for {} features",
                self.shapes.len()
            ))
        })?;
        let cuts = &self.binning.cuts[feature];
        Ok(shape
            .contributions
            .iter()
            .zip(&shape.bin_counts)
            .enumerate()
            .map(|(k, (&contribution, &count))| ShapeBin {
                lower: if k == 0 { None } else { Some(cuts[k - 1]) },
                upper: cuts.get(k).copied(),
                contribution,
                count,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model() -> GamModel {
        let binning = BinningSpec { cuts: vec![vec![0.0, 1.0], vec![]], max_bins: 64 };
        let mut m = GamModel::constant(binning, 0.3);
        m.shapes[0].contributions = vec![-0.5, 0.1, 0.7];
        m.diagnosis_offsets = vec![
            DiagnosisOffset { diagnosis: DiagnosisId(0), offset: -2.0, count: 10 },
            DiagnosisOffset { diagnosis: DiagnosisId(2), offset: 2.0, count: 10 },
        ];
        m.diagnosis_vocab = vec![DiagnosisId(0), DiagnosisId(1), DiagnosisId(2)];
        m
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = GamModel::constant(BinningSpec { cuts: vec![vec![1.0], vec![]], max_bins: 4 }, 0.0);
        assert_eq!(m.predict(&[5.0, -1.0], None).unwrap().probability, 0.5);
        assert!(m.shape_curve(0).unwrap().iter().all(|b| b.contribution == 0.0));
        assert_eq!(m.shape_curve(1).unwrap().len(), 1);
    }

    #[test]
    fn offsets_shift_log_odds_exactly() {
        let m = toy_model();
        let lo = m.predict(&[0.5, 9.0], Some(DiagnosisId(0))).unwrap();
        let hi = m.predict(&[0.5, 9.0], Some(DiagnosisId(2))).unwrap();
        assert!((hi.score - lo.score - 4.0).abs() < 1e-12);
        let logit = |p: f64| (p / (1.0 - p)).ln();
        assert!((logit(hi.probability) - logit(lo.probability) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn unseen_and_missing_diagnoses_fall_back_to_zero_offset() {
        let m = toy_model();
        let unseen = m.predict(&[0.5, 0.0], Some(DiagnosisId(1))).unwrap();
        let missing = m.predict(&[0.5, 0.0], None).unwrap();
        assert!(unseen.unseen_diagnosis);
        assert!(!missing.unseen_diagnosis);
        assert_eq!(unseen.score, missing.score);
        assert!((missing.score - 0.4).abs() < 1e-12);
    }

    #[test]
    fn shape_curve_reports_intervals_and_bad_index() {
        let m = toy_model();
        let curve = m.shape_curve(0).unwrap();
        assert_eq!(curve[0].lower, None);
        assert_eq!(curve[0].upper, Some(0.0));
        assert_eq!(curve[2].lower, Some(1.0));
        assert_eq!(curve[2].upper, None);
        assert!(m.shape_curve(5).is_err());
        assert!(matches!(m.predict(&[1.0], None), Err(Error::DimensionMismatch { .. })));
    }
}
