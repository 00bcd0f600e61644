//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use survdro::data::CsvSchema;
use survdro::dro::DroConfig;
use survdro::train::{Regularizer, TrainConfig, COX_ALPHA_GRID, DEEPHIT_ALPHA_GRID, LAMBDA_GRID, LEARNING_RATE_GRID};
use survdro::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    CoxLinear,
    CoxMlp,
    Deephit,
}

impl ModelChoice {
    pub fn is_cox(self) -> bool {
        !matches!(self, ModelChoice::Deephit)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Erm,
    RegFi,
    RegFg,
    RegFci,
    RegFcg,
    Dro,
    DroSplit,
    DroExactCox,
}

impl Method {
    pub fn is_dro(self) -> bool {
        matches!(self, Method::Dro | Method::DroSplit | Method::DroExactCox)
    }

    pub fn regularizer(self) -> Regularizer {
        match self {
            Method::RegFi => Regularizer::FI,
            Method::RegFg => Regularizer::FG,
            Method::RegFci => Regularizer::FCI,
            Method::RegFcg => Regularizer::FCG,
            _ => Regularizer::None,
        }
    }
}

/// Validation fairness metric minimised during tuning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuneMetric {
    #[default]
    Ci,
    FCg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub schema: CsvSchema,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepHitSettings {
    pub beta: f64,
    pub sigma: f64,
    /// Number of quantile grid points.
    pub grid_size: usize,
    /// Per-event-type weights for competing risks; all ones when empty.
    pub event_weights: Vec<f64>,
}

impl Default for DeepHitSettings {
    fn default() -> Self {
        Self { beta: 0.5, sigma: 0.1, grid_size: 10, event_weights: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelChoice,
    pub method: Method,
    /// Hidden widths for MLP models; a per-model default when absent.
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub dro: DroConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub deephit: DeepHitSettings,
    /// Attribute used for CI, F_G, F_CG and group regularizers; the first schema group when absent.
    #[serde(default)]
    pub group: Option<String>,
    /// Attributes crossed for F_∩; `group` alone when empty.
    #[serde(default)]
    pub intersect: Vec<String>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Learning rates tried during tuning; α values come from `train.alpha_grid`.
    #[serde(default)]
    pub learning_rates: Option<Vec<f64>>,
    /// λ values tried during tuning of regularized methods.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub tune_metric: TuneMetric,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_repeats() -> usize {
    10
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_val_fraction() -> f64 {
    0.2
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.dataset.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset.path = dir.join(&cfg.dataset.path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.dro.validate()?;
        if self.method == Method::DroExactCox && !self.model.is_cox() {
            return Err(Error::Config("dro-exact-cox requires a Cox model".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        for (name, f) in [("test_fraction", self.test_fraction), ("val_fraction", self.val_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0,1), got {f}")));
            }
        }
        if self.group_attribute().is_none() {
            return Err(Error::Config("an evaluation group attribute is required (set `group` or schema.group_cols)".into()));
        }
        let groups = &self.dataset.schema.group_cols;
        for g in self.group_attribute().into_iter().chain(self.intersect.iter().cloned()) {
            if !groups.contains(&g) {
                return Err(Error::Config(format!("group attribute `{g}` is not listed in schema.group_cols")));
            }
        }
        if self.model == ModelChoice::Deephit {
            if self.deephit.grid_size == 0 {
                return Err(Error::Config("deephit.grid_size must be positive".into()));
            }
            if !(0.0..=1.0).contains(&self.deephit.beta) || !(self.deephit.sigma > 0.0) {
                return Err(Error::Config("deephit needs beta in [0,1] and sigma > 0".into()));
            }
        }
        let check_grid = |name: &str, v: &[f64], ok: &dyn Fn(f64) -> bool| -> Result<()> {
            if v.is_empty() || v.iter().any(|&x| !ok(x)) {
                return Err(Error::Config(format!("invalid {name} grid {v:?}")));
            }
            Ok(())
        };
        check_grid("learning rate", &self.learning_rate_grid(), &|x| x >= 0.0 && x.is_finite())?;
        check_grid("alpha", &self.alpha_grid(), &|x| x > 0.0 && x <= 1.0)?;
        check_grid("lambda", &self.lambda_grid(), &|x| x >= 0.0 && x.is_finite())?;
        Ok(())
    }

    pub fn group_attribute(&self) -> Option<String> {
        self.group.clone().or_else(|| self.dataset.schema.group_cols.first().cloned())
    }

    pub fn learning_rate_grid(&self) -> Vec<f64> {
        self.learning_rates.clone().unwrap_or_else(|| LEARNING_RATE_GRID.to_vec())
    }

    pub fn alpha_grid(&self) -> Vec<f64> {
        let grid = &self.train.alpha_grid;
        if self.model == ModelChoice::Deephit && grid.as_slice() == COX_ALPHA_GRID.as_slice() {
            DEEPHIT_ALPHA_GRID.to_vec()
        } else {
            grid.clone()
        }
    }

    pub fn lambda_grid(&self) -> Vec<f64> {
        self.lambdas.clone().unwrap_or_else(|| LAMBDA_GRID.to_vec())
    }

    pub fn hidden_layers(&self) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| match self.model {
            ModelChoice::Deephit => vec![32, 32],
            _ => vec![24],
        })
    }
}
