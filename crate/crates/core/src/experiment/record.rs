use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::data::SyntheticDatasetSpec;
use super::eval::RetrievalMetrics;
use crate::trainer::TrainConfig;
use crate::weights::{PairFamily, TripletFamily};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub r1_image_to_text: f64,
    pub r1_text_to_image: f64,
    /// Mean positive similarity minus mean mined-negative similarity over
    /// the epoch's training triplets.
    pub loss_proxy: f64,
    pub skipped_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, reason: String },
}

/// One training run. Serializes without the wall-clock duration so that the
/// JSON is a pure function of configuration and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub triplet_weight: TripletFamily,
    pub pair_weight: PairFamily,
    pub objective_name: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub dataset: SyntheticDatasetSpec,
    pub initial_recall: RetrievalMetrics,
    pub epochs: Vec<EpochMetrics>,
    pub final_recall: Option<RetrievalMetrics>,
    pub status: RunStatus,
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl RunRecord {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self).map(|mut s| {
            s.push('\n');
            s
        })
    }

    pub fn file_name(&self) -> String {
        format!(
            "{}_{}_seed{}.json",
            self.triplet_weight, self.pair_weight, self.seed
        )
    }
}
