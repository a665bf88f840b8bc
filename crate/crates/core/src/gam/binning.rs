use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};

/// Per-feature cut points. Bin `k` holds values `x` with
/// `cuts[k-1] < x <= cuts[k]`; values beyond either end clamp to the edge bins.
/// Cut points are observed training values, so binning depends only on ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    pub cuts: Vec<Vec<f64>>,
    pub max_bins: usize,
}

impl BinningSpec {
    pub fn n_features(&self) -> usize {
        self.cuts.len()
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }

    #[inline]
    pub fn bin(&self, feature: usize, x: f64) -> usize {
        self.cuts[feature].partition_point(|&c| c < x)
    }
}

/// Equal-frequency cut points for one feature.
pub fn feature_cuts(values: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let max = sorted[n - 1];
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= max_bins {
        distinct.pop();
        return distinct;
    }
    let mut cuts: Vec<f64> = Vec::with_capacity(max_bins - 1);
    for k in 1..max_bins {
        let upto = (k * n).div_ceil(max_bins);
        let v = sorted[upto.max(1) - 1];
        if v < max && cuts.last().is_none_or(|&c| c < v) {
            cuts.push(v);
        }
    }
    cuts
}

pub fn bin_features(train: &Cohort, max_bins: usize) -> Result<BinningSpec> {
    if max_bins < 2 {
        return Err(Error::invalid("max_bins", "must be at least 2"));
    }
    if train.is_empty() {
        return Err(Error::InvalidInput("cannot bin an empty cohort".into()));
    }
    train.check_finite()?;
    let cuts = (0..train.n_features())
        .map(|j| {
            let column: Vec<f64> = train.records.iter().map(|r| r.features[j]).collect();
            feature_cuts(&column, max_bins)
        })
        .collect();
    Ok(BinningSpec { cuts, max_bins })
}
