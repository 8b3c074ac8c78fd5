use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CsvSchema, PrepareOptions, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{defaults, ClassifierConfig};
use crate::scenarios::ScenarioKind;
use crate::smoothing::DEFAULT_SMOOTHING_WINDOW;
use crate::strategies::StrategyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Directory written by `prepare`.
    Prepared { dir: PathBuf },
    Csv {
        path: PathBuf,
        schema: CsvSchema,
        #[serde(default)]
        prepare: PrepareOptions,
    },
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default)]
        prepare: PrepareOptions,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
}

/// Classifier settings; input width and head size default to the dataset's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "defaults::hidden")]
    pub hidden_size: usize,
    #[serde(default = "defaults::layers")]
    pub num_layers: usize,
    #[serde(default = "defaults::dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub max_classes: Option<usize>,
    #[serde(default = "defaults::lr")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs_per_task: usize,
    #[serde(default)]
    pub early_stopping_patience: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_size: defaults::hidden(),
            num_layers: defaults::layers(),
            dropout: defaults::dropout(),
            max_classes: None,
            learning_rate: defaults::lr(),
            batch_size: defaults::batch(),
            epochs_per_task: defaults::epochs(),
            early_stopping_patience: None,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, input_features: usize, n_drivers: usize) -> ClassifierConfig {
        ClassifierConfig {
            input_features,
            hidden_size: self.hidden_size,
            num_layers: self.num_layers,
            dropout: self.dropout,
            max_classes: self.max_classes.unwrap_or(n_drivers),
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs_per_task: self.epochs_per_task,
            early_stopping_patience: self.early_stopping_patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_window")]
    pub window: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig { enabled: true, window: DEFAULT_SMOOTHING_WINDOW }
    }
}

fn yes() -> bool {
    true
}

fn default_window() -> usize {
    DEFAULT_SMOOTHING_WINDOW
}

fn default_permutations() -> Vec<u64> {
    vec![0]
}

/// One experiment: a dataset, a scenario, the strategies to compare, and
/// the (seed, permutation) grid each strategy runs over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub scenario: ScenarioConfig,
    pub strategies: Vec<StrategyConfig>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    pub seeds: Vec<u64>,
    /// Class-order seeds; 0 keeps drivers in ascending id order.
    #[serde(default = "default_permutations")]
    pub permutations: Vec<u64>,
    pub output_dir: PathBuf,
    /// Also train a Joint model per run so every method gets a gap.
    #[serde(default = "yes")]
    pub joint_reference: bool,
    /// Run one training job at a time so task timings are not skewed.
    #[serde(default)]
    pub timing_serial: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses JSON for `.json` files and TOML otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            s.validate()?;
            if self.strategies[..i].iter().any(|o| o.name() == s.name()) {
                return Err(Error::Config(format!("strategy {} listed twice", s.name())));
            }
        }
        if self.seeds.is_empty() || self.permutations.is_empty() {
            return Err(Error::Config("seeds and permutations must be non-empty".into()));
        }
        for (what, list) in [("seed", &self.seeds), ("permutation", &self.permutations)] {
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != list.len() {
                return Err(Error::Config(format!("duplicate {what} values")));
            }
        }
        if self.smoothing.window == 0 {
            return Err(Error::Config("smoothing window must be at least 1".into()));
        }
        if let ScenarioKind::ClassGroups(sizes) = &self.scenario.kind {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(Error::Config("class groups must be non-empty".into()));
            }
        }
        match &self.dataset {
            DatasetSource::Csv { prepare, .. } | DatasetSource::Synthetic { prepare, .. } => prepare.validate()?,
            DatasetSource::Prepared { .. } => {}
        }
        if let DatasetSource::Synthetic { spec, .. } = &self.dataset {
            if spec.drivers == 0 || spec.sessions == 0 || spec.records == 0 || spec.features == 0 {
                return Err(Error::Config("synthetic dimensions must be positive".into()));
            }
        }
        self.model.resolve(1, 1).validate()
    }

    /// Strategies to train: the configured ones plus a Joint reference when
    /// requested and not already listed.
    pub fn training_strategies(&self) -> Vec<StrategyConfig> {
        let mut out = self.strategies.clone();
        if self.joint_reference && !out.contains(&StrategyConfig::Joint) {
            out.push(StrategyConfig::Joint);
        }
        out
    }
}
