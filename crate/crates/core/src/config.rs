//! Experiment configuration, loadable from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::BirchConfig;
use crate::continual::{SweepConfig, UpdateKnobs};
use crate::data::ScenarioSpec;
use crate::detector::ComponentPolicy;
use crate::error::{Error, Result};
use crate::nn::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub folds: usize,
    pub test_fold: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { folds: 5, test_fold: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![150, 100, 50],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// 1-based hidden layer whose activations are the embedding.
    pub layer: usize,
    pub policy: ComponentPolicy,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            layer: 2,
            policy: ComponentPolicy::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub threshold: f64,
    pub branching: usize,
    pub n_clusters: Option<usize>,
    pub representatives: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        let b = BirchConfig::default();
        ClusteringConfig {
            threshold: b.threshold,
            branching: b.branching,
            n_clusters: b.n_clusters,
            representatives: 5,
        }
    }
}

impl ClusteringConfig {
    pub fn birch(&self) -> BirchConfig {
        BirchConfig {
            threshold: self.threshold,
            branching: self.branching,
            n_clusters: self.n_clusters,
        }
    }
}

/// Every experiment knob. Absent sections take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for data generation, initialization and shuffling.
    pub seed: u64,
    pub scenario: ScenarioSpec,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub detector: DetectorConfig,
    pub clustering: ClusteringConfig,
    pub update: UpdateKnobs,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Points every seeded component at `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.shuffle_seed = seed;
        self.update.train.shuffle_seed = seed;
        self.update.expansion_seed = seed;
        self.sweep.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        self.update.train.validate()?;
        self.sweep.validate()?;
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::config("model.hidden must list positive layer widths"));
        }
        if self.detector.layer == 0 || self.detector.layer > self.model.hidden.len() {
            return Err(Error::config(format!(
                "detector.layer must be in 1..={}, got {}",
                self.model.hidden.len(),
                self.detector.layer
            )));
        }
        if self.split.folds > 1 && self.split.test_fold >= self.split.folds {
            return Err(Error::config("split.test_fold must be below split.folds"));
        }
        Ok(())
    }

    /// `[d, hidden.., C]` for the configured scenario.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.scenario.dim];
        sizes.extend(&self.model.hidden);
        sizes.push(self.scenario.known().count());
        sizes
    }
}
