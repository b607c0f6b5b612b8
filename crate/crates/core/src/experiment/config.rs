//! TOML experiment configuration. Every section and key is optional;
//! missing values fall back to the defaults below.
//!
//! ```toml
//! [dataset]
//! concepts = 32
//! noise_sigma = 0.05
//!
//! [train]
//! learning_rate = 0.1
//! epochs = 200
//!
//! [hyperparameters]
//! margin = 0.2
//! scale = 10.0
//!
//! [objective]
//! triplet = "cir"
//! pair = "sig-ms"
//!
//! [grid]
//! seeds = [0, 1, 2]
//! workers = 4
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::check::CheckSettings;
use super::data::SyntheticDatasetSpec;
use super::grid::GridTemplate;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;
use crate::weights::{GradientObjective, Hyperparameters, PairFamily, TripletFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 32,
            embed_dim: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSelection {
    pub triplet: TripletFamily,
    pub pair: PairFamily,
}

impl Default for ObjectiveSelection {
    fn default() -> Self {
        Self {
            triplet: TripletFamily::Con,
            pair: PairFamily::Con,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub seeds: Vec<u64>,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            workers: 0,
        }
    }
}

impl GridSettings {
    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: SyntheticDatasetSpec,
    pub train: TrainSettings,
    pub hyperparameters: Hyperparameters,
    pub objective: ObjectiveSelection,
    pub grid: GridSettings,
    pub check: CheckSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn objective(&self) -> Result<GradientObjective> {
        GradientObjective::from_families(
            self.objective.triplet,
            self.objective.pair,
            &self.hyperparameters,
        )
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            embed_dim: self.train.embed_dim,
            seed: self.train.seed,
            objective: self.objective()?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn grid_template(&self) -> GridTemplate {
        GridTemplate {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            embed_dim: self.train.embed_dim,
            hyperparameters: self.hyperparameters,
        }
    }
}
