//! Synthetic data, retrieval evaluation, the combination grid, weight
//! diagrams, gradient checks and configuration for the command-line tool.

pub mod check;
pub mod config;
pub mod data;
pub mod diagram;
pub mod eval;
pub mod grid;
pub mod record;

pub use check::{check_all, check_objective, CheckRow, CheckSettings};
pub use config::ExperimentConfig;
pub use data::{generate_dataset, Dataset, Sample, SplitDataset, SyntheticDatasetSpec};
pub use diagram::{emit_weight_diagram, DiagramKind, DiagramRow};
pub use eval::{recall_at_k, retrieval_metrics, Direction, RecallAtK, RetrievalMetrics};
pub use grid::{run_grid, run_grid_on, GridReport, GridTemplate};
pub use record::{EpochMetrics, RunRecord, RunStatus};
