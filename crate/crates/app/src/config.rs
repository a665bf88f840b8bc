//! Run configuration, read from a single TOML file.
//!
//! Every table and field is optional; `duacm config` prints the resolved
//! configuration with all defaults filled in. The top-level `seed` drives
//! every random stage: component `seed` fields are overwritten with values
//! derived from it, so a config file plus a seed fully determines a run.

use std::path::{Path, PathBuf};

use duacm_core::cohort::{presets, CohortSpec};
use duacm_core::diagmodel::MlpConfig;
use duacm_core::duacm::DuConfig;
use duacm_core::eval::HarnessConfig;
use duacm_core::gam::GamConfig;
use duacm_core::math;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub cohort: CohortConfig,
    pub split: SplitConfig,
    pub gam: GamConfig,
    pub mlp: MlpConfig,
    pub inference: DuConfig,
    pub evaluate: EvaluateConfig,
    pub experiment: ExperimentConfig,
    pub serve: ServeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            cohort: CohortConfig::default(),
            split: SplitConfig::default(),
            gam: GamConfig::default(),
            mlp: MlpConfig::default(),
            inference: DuConfig::default(),
            evaluate: EvaluateConfig::default(),
            experiment: ExperimentConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Confusable,
    Registry,
    Nonlinear,
    Transferable,
}

/// Cohort for `generate`: a named preset, or a full spec when `spec` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub preset: Preset,
    pub n_patients: usize,
    /// Used by the `registry` and `transferable` presets.
    pub n_diagnoses: usize,
    pub spec: Option<CohortSpec>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            preset: Preset::Confusable,
            n_patients: 20_000,
            n_diagnoses: 20,
            spec: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Train, validation (early stopping and grid selection) and test shares.
    pub fractions: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: [0.7, 0.1, 0.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub calibration_bins: usize,
    /// Diagnoses listed per patient in `predict` output.
    pub top_k: usize,
    /// Minimum posterior probability for a diagnosis to count as a risk driver.
    pub driver_threshold: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            calibration_bins: 10,
            top_k: 3,
            driver_threshold: duacm_core::duacm::DEFAULT_DRIVER_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Diagnoses enter the comparison set with at least this many patients...
    pub min_patients: usize,
    /// ...and at least this mortality rate.
    pub min_mortality: f64,
    pub harness: HarnessConfig,
    pub logistic_lambdas: Vec<f64>,
    pub logistic_folds: usize,
    /// Width of the pessimistic-delta histogram bins.
    pub delta_bin_width: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            min_patients: 200,
            min_mortality: 0.05,
            harness: HarnessConfig::default(),
            logistic_lambdas: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            logistic_folds: 5,
            delta_bin_width: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    pub idle_timeout_secs: u64,
    /// Directory of static UI assets served under `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: "127.0.0.1:8080".into(),
            idle_timeout_secs: 30 * 60,
            static_dir: None,
        }
    }
}

/// Stage tags for seed derivation; changing one changes that stage only.
#[derive(Clone, Copy)]
pub enum Stage {
    Cohort = 1,
    Split = 2,
    Gam = 3,
    Mlp = 4,
    Inference = 5,
    Harness = 6,
    Logistic = 7,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    fn validate(&self) -> Result<()> {
        let f = self.split.fractions;
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(AppError::Config("split.fractions must be in [0, 1] and sum to 1".into()));
        }
        if self.evaluate.calibration_bins < 2 {
            return Err(AppError::Config("evaluate.calibration_bins must be at least 2".into()));
        }
        if !(self.experiment.delta_bin_width > 0.0 && self.experiment.delta_bin_width <= 1.0) {
            return Err(AppError::Config("experiment.delta_bin_width must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        math::rng(self.seed, stage as u64).random()
    }

    pub fn cohort_spec(&self) -> CohortSpec {
        let seed = self.stage_seed(Stage::Cohort);
        let c = &self.cohort;
        match &c.spec {
            Some(spec) => CohortSpec { seed, ..spec.clone() },
            None => match c.preset {
                Preset::Confusable => presets::confusable(c.n_patients, seed),
                Preset::Registry => presets::registry(c.n_patients, c.n_diagnoses, seed),
                Preset::Nonlinear => presets::nonlinear(c.n_patients, seed),
                Preset::Transferable => presets::transferable(c.n_patients, c.n_diagnoses, seed),
            },
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            fractions: self.split.fractions,
            seed: self.stage_seed(Stage::Split),
        }
    }

    /// Outcome model settings for `train`; always fits the diagnosis term.
    pub fn gam_config(&self) -> GamConfig {
        GamConfig {
            use_diagnosis: true,
            seed: self.stage_seed(Stage::Gam),
            ..self.gam.clone()
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            seed: self.stage_seed(Stage::Mlp),
            ..self.mlp.clone()
        }
    }

    pub fn du_config(&self) -> DuConfig {
        DuConfig {
            seed: self.stage_seed(Stage::Inference),
            ..self.inference.clone()
        }
    }

    pub fn harness_config(&self) -> HarnessConfig {
        let h = &self.experiment.harness;
        HarnessConfig {
            seed: self.stage_seed(Stage::Harness),
            gam: GamConfig {
                use_diagnosis: false,
                ..h.gam.clone()
            },
            ..h.clone()
        }
    }
}

/// How a cohort was split into train, validation and test parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn apply(&self, cohort: &duacm_core::Cohort) -> Result<(duacm_core::Cohort, duacm_core::Cohort, duacm_core::Cohort)> {
        let [a, b, c] = self.fractions;
        Ok(duacm_core::cohort::split(cohort, (a, b, c), self.seed)?)
    }
}
