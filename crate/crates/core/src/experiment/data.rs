//! Synthetic bimodal data: each concept has one prototype per modality and
//! every sample is its prototype plus isotropic Gaussian noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::mining::EmbeddingBatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDatasetSpec {
    pub concepts: usize,
    pub samples_per_concept: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub noise_sigma: f64,
    /// Fraction of each concept's pairs held out for evaluation.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            concepts: 32,
            samples_per_concept: 10,
            image_dim: 64,
            text_dim: 48,
            noise_sigma: 0.05,
            holdout_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.concepts < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 concepts, got {}",
                self.concepts
            )));
        }
        if self.samples_per_concept < 2 {
            return Err(Error::InvalidArgument(
                "need at least 2 samples per concept to hold one out".into(),
            ));
        }
        if self.image_dim == 0 || self.text_dim == 0 {
            return Err(Error::InvalidArgument(
                "ambient dimensions must be positive".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "holdout_fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }

    /// Held-out pairs per concept: the rounded fraction, at least one, and
    /// leaving at least one for training.
    pub fn holdout_per_concept(&self) -> usize {
        let k = (self.samples_per_concept as f64 * self.holdout_fraction).round() as usize;
        k.clamp(1, self.samples_per_concept - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Vec<f64>,
    pub text: Vec<f64>,
    pub concept: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticDatasetSpec,
    pub image_prototypes: Vec<Vec<f64>>,
    pub text_prototypes: Vec<Vec<f64>>,
    /// Concept-major: all samples of concept 0, then concept 1, ...
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub spec: SyntheticDatasetSpec,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn gaussian_vector(rng: &mut impl Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit_prototype(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vector(rng, dim, 1.0);
        let n = norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn distinct(prototypes: &[Vec<f64>]) -> bool {
    prototypes
        .iter()
        .enumerate()
        .all(|(i, a)| prototypes[..i].iter().all(|b| a != b))
}

/// Prototypes are unit vectors drawn per modality; samples add `N(0, σ²)`
/// noise per coordinate. Deterministic in `spec.seed`.
pub fn generate_dataset(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let image_prototypes: Vec<_> = (0..spec.concepts)
        .map(|_| unit_prototype(&mut rng, spec.image_dim))
        .collect();
    let text_prototypes: Vec<_> = (0..spec.concepts)
        .map(|_| unit_prototype(&mut rng, spec.text_dim))
        .collect();
    if !distinct(&image_prototypes) || !distinct(&text_prototypes) {
        return Err(Error::InvalidArgument("concept prototypes collided".into()));
    }
    let mut samples = Vec::with_capacity(spec.concepts * spec.samples_per_concept);
    for concept in 0..spec.concepts {
        for _ in 0..spec.samples_per_concept {
            let image = image_prototypes[concept]
                .iter()
                .zip(gaussian_vector(&mut rng, spec.image_dim, spec.noise_sigma))
                .map(|(p, e)| p + e)
                .collect();
            let text = text_prototypes[concept]
                .iter()
                .zip(gaussian_vector(&mut rng, spec.text_dim, spec.noise_sigma))
                .map(|(p, e)| p + e)
                .collect();
            samples.push(Sample {
                image,
                text,
                concept,
            });
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        image_prototypes,
        text_prototypes,
        samples,
    })
}

fn nearest(prototypes: &[Vec<f64>], v: &[f64]) -> usize {
    let dist = |p: &Vec<f64>| -> f64 { p.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum() };
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, p) in prototypes.iter().enumerate() {
        let d = dist(p);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

impl Dataset {
    /// Fraction of sample vectors (both modalities) whose nearest prototype
    /// in Euclidean distance belongs to their own concept.
    pub fn nearest_prototype_accuracy(&self) -> f64 {
        let hits: usize = self
            .samples
            .iter()
            .map(|s| {
                usize::from(nearest(&self.image_prototypes, &s.image) == s.concept)
                    + usize::from(nearest(&self.text_prototypes, &s.text) == s.concept)
            })
            .sum();
        hits as f64 / (2 * self.samples.len()) as f64
    }

    /// Holds out `holdout_per_concept` pairs of each concept, chosen from the
    /// dataset seed. Both halves stay concept-major.
    pub fn split(&self) -> SplitDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(1);
        let per = self.spec.samples_per_concept;
        let hold = self.spec.holdout_per_concept();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for concept in 0..self.spec.concepts {
            let mut idx: Vec<usize> = (0..per).collect();
            idx.shuffle(&mut rng);
            let mut held = idx[..hold].to_vec();
            held.sort_unstable();
            for k in 0..per {
                let sample = self.samples[concept * per + k].clone();
                if held.binary_search(&k).is_ok() {
                    test.push(sample);
                } else {
                    train.push(sample);
                }
            }
        }
        SplitDataset {
            spec: self.spec.clone(),
            train,
            test,
        }
    }
}

/// Random batch of unit vectors for gradient checks. Concept ids cycle
/// through `n / 2` values so every concept has two members.
pub fn random_unit_batch(rng: &mut impl Rng, n: usize, dim: usize) -> EmbeddingBatch {
    let concepts = (n / 2).max(2);
    let x = (0..n).map(|_| unit_prototype(rng, dim)).collect();
    let y = (0..n).map(|_| unit_prototype(rng, dim)).collect();
    let ids = (0..n).map(|i| i % concepts).collect();
    EmbeddingBatch::new(x, y, ids).expect("unit vectors form a valid batch")
}
