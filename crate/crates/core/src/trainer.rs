//! Two-tower linear embedding model trained by injecting assembled
//! gradients straight into SGD updates.
//!
//! Each tower is a bias-free linear map followed by L2 normalization. A step
//! is forward → similarities → mining → [`batch_gradient`] → chain rule
//! through normalization and the linear map → `W ← W − η·∇W`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::data::{Sample, SplitDataset};
use crate::experiment::eval::{retrieval_metrics, RetrievalMetrics};
use crate::experiment::record::{EpochMetrics, RunRecord, RunStatus};
use crate::gradient::{batch_gradient, project_through_normalization, BatchGradient};
use crate::linalg::{dot, Matrix};
use crate::mining::{l2_normalize, mine_hard_negatives, similarity_matrix, EmbeddingBatch};
use crate::weights::{combination_label, GradientObjective};

#[derive(Debug, Clone, PartialEq)]
pub struct TwoTowerModel {
    /// `D × D_img`
    pub image_tower: Matrix,
    /// `D × D_txt`
    pub text_tower: Matrix,
}

fn uniform_init(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.random_range(-bound..=bound);
    }
    m
}

impl TwoTowerModel {
    pub fn new(image_tower: Matrix, text_tower: Matrix) -> Result<Self> {
        let model = Self {
            image_tower,
            text_tower,
        };
        model.validate()?;
        Ok(model)
    }

    /// Entries uniform in `±1/√fan_in`, drawn from `seed`.
    pub fn init(embed_dim: usize, image_dim: usize, text_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(
            uniform_init(&mut rng, embed_dim, image_dim),
            uniform_init(&mut rng, embed_dim, text_dim),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_tower.rows() != self.text_tower.rows() {
            return Err(Error::Shape(format!(
                "towers disagree on embedding dim ({} vs {})",
                self.image_tower.rows(),
                self.text_tower.rows()
            )));
        }
        if self.embed_dim() < 2 {
            return Err(Error::InvalidArgument(
                "embedding dim must be at least 2".into(),
            ));
        }
        if !self.image_tower.is_finite() || !self.text_tower.is_finite() {
            return Err(Error::InvalidArgument(
                "tower weights must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> usize {
        self.image_tower.rows()
    }

    pub fn image_dim(&self) -> usize {
        self.image_tower.cols()
    }

    pub fn text_dim(&self) -> usize {
        self.text_tower.cols()
    }
}

/// Result of a forward pass, keeping the pre-normalization projections
/// needed by the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub batch: EmbeddingBatch,
    pub image_projections: Vec<Vec<f64>>,
    pub text_projections: Vec<Vec<f64>>,
}

pub fn forward(
    model: &TwoTowerModel,
    images: &[&[f64]],
    texts: &[&[f64]],
    concept_ids: Vec<usize>,
) -> Result<ForwardPass> {
    if images.len() != texts.len() {
        return Err(Error::Shape(format!(
            "{} images but {} texts",
            images.len(),
            texts.len()
        )));
    }
    let project = |tower: &Matrix, inputs: &[&[f64]]| -> Result<Vec<Vec<f64>>> {
        inputs
            .iter()
            .map(|v| {
                if v.len() != tower.cols() {
                    Err(Error::Shape(format!(
                        "input has dim {}, tower expects {}",
                        v.len(),
                        tower.cols()
                    )))
                } else {
                    Ok(tower.matvec(v))
                }
            })
            .collect()
    };
    let image_projections = project(&model.image_tower, images)?;
    let text_projections = project(&model.text_tower, texts)?;
    let x = image_projections
        .iter()
        .map(|v| l2_normalize(v))
        .collect::<Result<_>>()?;
    let y = text_projections
        .iter()
        .map(|v| l2_normalize(v))
        .collect::<Result<_>>()?;
    Ok(ForwardPass {
        batch: EmbeddingBatch::new(x, y, concept_ids)?,
        image_projections,
        text_projections,
    })
}

/// Gradients with respect to both towers' weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerGradients {
    pub image: Matrix,
    pub text: Matrix,
}

fn tower_gradient(
    rows: usize,
    inputs: &[&[f64]],
    projections: &[Vec<f64>],
    grads: &[Vec<f64>],
) -> Result<Matrix> {
    let cols = inputs.first().map_or(0, |v| v.len());
    let mut g = Matrix::zeros(rows, cols);
    for ((input, proj), grad) in inputs.iter().zip(projections).zip(grads) {
        let raw_grad = project_through_normalization(proj, grad)?;
        g.add_outer(1.0, &raw_grad, input);
    }
    Ok(g)
}

/// Chain rule from embedding gradients to weight gradients, summed over
/// the batch.
pub fn weight_gradients(
    model: &TwoTowerModel,
    images: &[&[f64]],
    texts: &[&[f64]],
    pass: &ForwardPass,
    grad: &BatchGradient,
) -> Result<TowerGradients> {
    if grad.len() != pass.batch.len() {
        return Err(Error::Shape(format!(
            "gradient covers {} samples, forward pass has {}",
            grad.len(),
            pass.batch.len()
        )));
    }
    Ok(TowerGradients {
        image: tower_gradient(
            model.embed_dim(),
            images,
            &pass.image_projections,
            &grad.grad_x,
        )?,
        text: tower_gradient(
            model.embed_dim(),
            texts,
            &pass.text_projections,
            &grad.grad_y,
        )?,
    })
}

/// One SGD step. The model is left untouched when the gradient is not finite.
pub fn backward_and_step(
    model: &mut TwoTowerModel,
    images: &[&[f64]],
    texts: &[&[f64]],
    pass: &ForwardPass,
    grad: &BatchGradient,
    learning_rate: f64,
) -> Result<()> {
    if !grad.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            reason: "non-finite embedding gradient".into(),
        });
    }
    let g = weight_gradients(model, images, texts, pass, grad)?;
    if !g.image.is_finite() || !g.text.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            reason: "non-finite weight gradient".into(),
        });
    }
    for (w, d) in model
        .image_tower
        .as_mut_slice()
        .iter_mut()
        .zip(g.image.as_slice())
    {
        *w -= learning_rate * d;
    }
    for (w, d) in model
        .text_tower
        .as_mut_slice()
        .iter_mut()
        .zip(g.text.as_slice())
    {
        *w -= learning_rate * d;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub seed: u64,
    pub objective: GradientObjective,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 4 {
            return Err(Error::InvalidArgument(format!(
                "batch size must be at least 4, got {}",
                self.batch_size
            )));
        }
        if self.embed_dim < 2 {
            return Err(Error::InvalidArgument(
                "embedding dim must be at least 2".into(),
            ));
        }
        self.objective.triplet_weight.validate()?;
        self.objective.pair_weight.validate()
    }
}

/// Embeds a pool of samples and returns its similarity matrix's recall.
pub fn evaluate(model: &TwoTowerModel, samples: &[Sample]) -> Result<RetrievalMetrics> {
    let images: Vec<&[f64]> = samples.iter().map(|s| s.image.as_slice()).collect();
    let texts: Vec<&[f64]> = samples.iter().map(|s| s.text.as_slice()).collect();
    let ids = samples.iter().map(|s| s.concept).collect::<Vec<_>>();
    let pass = forward(model, &images, &texts, ids.clone())?;
    retrieval_metrics(&similarity_matrix(&pass.batch), &ids)
}

enum StepOutcome {
    Applied { proxy: f64 },
    Skipped,
}

fn train_step(
    model: &mut TwoTowerModel,
    batch: &[&Sample],
    config: &TrainConfig,
) -> Result<StepOutcome> {
    let ids: Vec<usize> = batch.iter().map(|s| s.concept).collect();
    if ids.iter().all(|&c| c == ids[0]) {
        return Ok(StepOutcome::Skipped);
    }
    let images: Vec<&[f64]> = batch.iter().map(|s| s.image.as_slice()).collect();
    let texts: Vec<&[f64]> = batch.iter().map(|s| s.text.as_slice()).collect();
    let pass = forward(model, &images, &texts, ids)?;
    let s = similarity_matrix(&pass.batch);
    let mined = mine_hard_negatives(
        &s,
        &pass.batch.concept_ids,
        config.objective.pair_weight.relative_margin(),
    )?;
    let n = pass.batch.len();
    let pos: f64 = (0..n).map(|i| s.get(i, i)).sum::<f64>() / n as f64;
    let neg: f64 = (0..n)
        .map(|i| s.get(i, mined.hard_neg_text[i]) + s.get(mined.hard_neg_image[i], i))
        .sum::<f64>()
        / (2 * n) as f64;
    let grad = batch_gradient(&config.objective, &pass.batch, &mined)?;
    backward_and_step(model, &images, &texts, &pass, &grad, config.learning_rate)?;
    Ok(StepOutcome::Applied { proxy: pos - neg })
}

/// Trains `model` in place with shuffled mini-batches drawn from
/// `config.seed`. Divergence ends the run early and is reported in the
/// record's status rather than as an error.
pub fn train(
    model: &mut TwoTowerModel,
    data: &SplitDataset,
    config: &TrainConfig,
) -> Result<RunRecord> {
    config.validate()?;
    if model.embed_dim() != config.embed_dim {
        return Err(Error::Shape(format!(
            "model embeds into {} dims, config asks for {}",
            model.embed_dim(),
            config.embed_dim
        )));
    }
    let mut concepts: Vec<usize> = data.train.iter().map(|s| s.concept).collect();
    concepts.sort_unstable();
    concepts.dedup();
    if concepts.len() < 2 {
        return Err(Error::InvalidArgument(
            "training pool needs at least 2 concepts".into(),
        ));
    }

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let initial_recall = evaluate(model, &data.test)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut status = RunStatus::Completed;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut proxy_sum = 0.0;
        let mut applied = 0usize;
        let mut skipped = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 4 {
                skipped += 1;
                continue;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&k| &data.train[k]).collect();
            match train_step(model, &batch, config) {
                Ok(StepOutcome::Applied { proxy }) => {
                    proxy_sum += proxy;
                    applied += 1;
                }
                Ok(StepOutcome::Skipped) => skipped += 1,
                Err(e @ (Error::Divergence { .. } | Error::Normalization { .. })) => {
                    let reason = match e {
                        Error::Divergence { reason, .. } => reason,
                        other => other.to_string(),
                    };
                    status = RunStatus::Diverged { epoch, reason };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let recall = evaluate(model, &data.test)?;
        epochs.push(EpochMetrics {
            epoch,
            r1_image_to_text: recall.image_to_text.r1,
            r1_text_to_image: recall.text_to_image.r1,
            loss_proxy: if applied > 0 {
                proxy_sum / applied as f64
            } else {
                f64::NAN
            },
            skipped_batches: skipped,
        });
    }

    let final_recall = match status {
        RunStatus::Completed => Some(evaluate(model, &data.test)?),
        RunStatus::Diverged { .. } => None,
    };
    let (triplet_weight, pair_weight) = config.objective.families();
    Ok(RunRecord {
        triplet_weight,
        pair_weight,
        objective_name: combination_label(&config.objective).to_string(),
        seed: config.seed,
        config: config.clone(),
        dataset: data.spec.clone(),
        initial_recall,
        epochs,
        final_recall,
        status,
        wall_clock: started.elapsed(),
    })
}

/// Builds a model from `config` and trains it.
pub fn train_from_scratch(
    data: &SplitDataset,
    config: &TrainConfig,
) -> Result<(TwoTowerModel, RunRecord)> {
    let mut model = TwoTowerModel::init(
        config.embed_dim,
        data.spec.image_dim,
        data.spec.text_dim,
        config.seed,
    )?;
    let record = train(&mut model, data, config)?;
    Ok((model, record))
}

/// Cosine similarity between two towers' outputs for a single pair.
pub fn pair_similarity(model: &TwoTowerModel, image: &[f64], text: &[f64]) -> Result<f64> {
    let x = l2_normalize(&model.image_tower.matvec(image))?;
    let y = l2_normalize(&model.text_tower.matvec(text))?;
    Ok(dot(&x, &y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_tower_passes_unit_inputs_through() {
        let model = TwoTowerModel::new(Matrix::identity(3), Matrix::identity(3)).unwrap();
        let a = [0.6, 0.8, 0.0];
        let b = [0.0, 0.0, 1.0];
        let pass = forward(&model, &[&a, &b], &[&b, &a], vec![0, 1]).unwrap();
        assert_eq!(pass.batch.x[0], a.to_vec());
        assert_eq!(pass.batch.y[0], b.to_vec());
    }

    #[test]
    fn scaled_tower_gives_same_embeddings() {
        let model = TwoTowerModel::init(4, 5, 6, 3).unwrap();
        let mut scaled = model.clone();
        scaled.image_tower.scale(2.0);
        scaled.text_tower.scale(2.0);
        let img = [0.1, -0.4, 0.3, 0.9, 0.2];
        let txt = [0.5, 0.1, -0.2, 0.3, 0.7, -0.1];
        let a = forward(&model, &[&img], &[&txt], vec![0]).unwrap();
        let b = forward(&scaled, &[&img], &[&txt], vec![0]).unwrap();
        for (u, v) in a.batch.x[0].iter().zip(&b.batch.x[0]) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_projection_is_a_normalization_error() {
        let model = TwoTowerModel::new(Matrix::zeros(2, 2), Matrix::identity(2));
        // zero weights are finite, so the model is valid
        let model = model.unwrap();
        let err = forward(&model, &[&[1.0, 0.0]], &[&[1.0, 0.0]], vec![0]);
        assert!(matches!(err, Err(Error::Normalization { .. })));
    }

    #[test]
    fn zero_gradient_leaves_model_unchanged() {
        let mut model = TwoTowerModel::init(3, 4, 4, 1).unwrap();
        let before = model.clone();
        let a = [1.0, 0.0, 0.5, 0.2];
        let b = [0.0, 1.0, 0.1, 0.3];
        let pass = forward(&model, &[&a, &b], &[&b, &a], vec![0, 1]).unwrap();
        let grad = BatchGradient::zeros(2, 3);
        backward_and_step(&mut model, &[&a, &b], &[&b, &a], &pass, &grad, 0.5).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut model = TwoTowerModel::init(3, 4, 4, 1).unwrap();
        let before = model.clone();
        let a = [1.0, 0.0, 0.5, 0.2];
        let pass = forward(&model, &[&a], &[&a], vec![0]).unwrap();
        let mut grad = BatchGradient::zeros(1, 3);
        grad.grad_x[0][1] = f64::NAN;
        let err = backward_and_step(&mut model, &[&a], &[&a], &pass, &grad, 0.5);
        assert!(matches!(err, Err(Error::Divergence { .. })));
        assert_eq!(model, before);
    }

    #[test]
    fn config_validation() {
        let objective = GradientObjective::grid(&Default::default()).unwrap()[0];
        let ok = TrainConfig {
            learning_rate: 0.1,
            epochs: 1,
            batch_size: 4,
            embed_dim: 2,
            seed: 0,
            objective,
        };
        assert!(ok.validate().is_ok());
        assert!(TrainConfig {
            batch_size: 3,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rate: -1.0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { embed_dim: 1, ..ok }.validate().is_err());
    }
}
