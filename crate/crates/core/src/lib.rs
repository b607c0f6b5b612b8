//! Triplet-family metric-learning objectives assembled directly in
//! gradient space.
//!
//! A training objective is a pair of weighting rules: a triplet weight
//! (`con`, `nca`, `cir`) and a pair weight (`con`, `lin`, `sig`, `sig-ms`,
//! `lin-ms`). [`gradient::batch_gradient`] turns a mined batch of paired
//! embeddings into per-embedding gradients without ever forming a loss, so
//! combinations with no antiderivative train just like the classical ones.
//! [`reference`] provides the losses for the integrable combinations and a
//! finite-difference oracle that checks the two agree.

pub mod error;
pub mod experiment;
pub mod gradient;
pub mod linalg;
pub mod mining;
pub mod reference;
pub mod trainer;
pub mod weights;

pub use error::{Error, Result};
pub use gradient::{
    batch_gradient, project_through_normalization, triplet_gradient, BatchGradient,
};
pub use mining::{
    l2_normalize, mine_hard_negatives, relative_sets, similarity_matrix, EmbeddingBatch,
    MinedTripletSet, SimilarityMatrix,
};
pub use trainer::{backward_and_step, forward, train, TrainConfig, TwoTowerModel};
pub use weights::{
    combination_label, combination_name, pair_weight_negative, pair_weight_positive,
    triplet_weight, GradientObjective, Hyperparameters, PairFamily, PairWeightKind,
    RelativeSimilarities, TripletFamily, TripletWeightKind,
};
