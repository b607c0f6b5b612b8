//! Direct assembly of per-embedding gradients from triplet and pair weights.
//!
//! For a triplet `(a, p, n)` with `s_pos = a·p` and `s_neg = a·n`, the
//! weights `T`, `P₊`, `P₋` give the contributions
//!
//! ```text
//! ∂/∂a = −T·P₊·p + T·P₋·n
//! ∂/∂p = −T·P₊·a
//! ∂/∂n = +T·P₋·a
//! ```
//!
//! Each batch contributes two triplet families: `(x_i, y_i, y′_i)` with the
//! image as anchor and `(y_i, x_i, x′_i)` with the text as anchor. The result
//! is a descent direction for the normalized embeddings; parameters are
//! updated with `θ ← θ − η·∂x/∂θ·grad`.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, scaled};
use crate::mining::{EmbeddingBatch, MinedTripletSet};
use crate::weights::{
    pair_weight_negative, pair_weight_positive, triplet_weight, GradientObjective,
    RelativeSimilarities,
};

/// Gradient with respect to every normalized embedding of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub grad_x: Vec<Vec<f64>>,
    pub grad_y: Vec<Vec<f64>>,
}

impl BatchGradient {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            grad_x: vec![vec![0.0; dim]; n],
            grad_y: vec![vec![0.0; dim]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grad_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_x.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.grad_x
            .iter()
            .chain(&self.grad_y)
            .flatten()
            .all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.grad_x
            .iter()
            .chain(&self.grad_y)
            .flatten()
            .all(|&v| v == 0.0)
    }

    /// Entries in a fixed order: all of `grad_x`, then all of `grad_y`.
    pub fn flatten(&self) -> Vec<f64> {
        self.grad_x
            .iter()
            .chain(&self.grad_y)
            .flatten()
            .copied()
            .collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.grad_x
            .iter_mut()
            .chain(self.grad_y.iter_mut())
            .flatten()
            .for_each(|v| *v *= s);
    }

    pub fn swapped(&self) -> Self {
        Self {
            grad_x: self.grad_y.clone(),
            grad_y: self.grad_x.clone(),
        }
    }

    fn add_assign(&mut self, other: &BatchGradient) {
        for (a, b) in self
            .grad_x
            .iter_mut()
            .chain(self.grad_y.iter_mut())
            .zip(other.grad_x.iter().chain(&other.grad_y))
        {
            axpy(a, 1.0, b);
        }
    }
}

/// Scalars attached to one triplet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletWeights {
    pub triplet: f64,
    pub positive: f64,
    pub negative: f64,
}

/// Per-vector contributions of a single triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletContribution {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// What a weighting callback gets to see about a triplet.
#[derive(Debug, Clone, Copy)]
pub struct TripletView<'a> {
    pub s_pos: f64,
    pub s_neg: f64,
    pub relatives: &'a RelativeSimilarities,
    pub image_anchor: bool,
    pub anchor_index: usize,
}

pub fn objective_weights(
    obj: &GradientObjective,
    s_pos: f64,
    s_neg: f64,
    rel: &RelativeSimilarities,
) -> TripletWeights {
    TripletWeights {
        triplet: triplet_weight(&obj.triplet_weight, s_pos, s_neg),
        positive: pair_weight_positive(&obj.pair_weight, s_pos, rel),
        negative: pair_weight_negative(&obj.pair_weight, s_neg, rel),
    }
}

fn contribution(
    w: TripletWeights,
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
) -> TripletContribution {
    let pull = w.triplet * w.positive;
    let push = w.triplet * w.negative;
    let mut grad_anchor = scaled(positive, -pull);
    axpy(&mut grad_anchor, push, negative);
    TripletContribution {
        anchor: grad_anchor,
        positive: scaled(anchor, -pull),
        negative: scaled(anchor, push),
    }
}

/// Gradient contributions of one triplet under `obj`.
pub fn triplet_gradient(
    obj: &GradientObjective,
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    rel: &RelativeSimilarities,
) -> TripletContribution {
    let w = objective_weights(obj, dot(anchor, positive), dot(anchor, negative), rel);
    contribution(w, anchor, positive, negative)
}

/// Accumulates one triplet family. `anchors[i]` is paired with
/// `candidates[i]`, and `negatives[i]` indexes into `candidates`.
fn accumulate_family<F>(
    anchors: &[Vec<f64>],
    candidates: &[Vec<f64>],
    negatives: &[usize],
    relatives: &[RelativeSimilarities],
    image_anchor: bool,
    weigh: &mut F,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>)
where
    F: FnMut(&TripletView<'_>) -> TripletWeights,
{
    let n = anchors.len();
    let dim = anchors.first().map_or(0, Vec::len);
    let mut grad_anchor = vec![vec![0.0; dim]; n];
    let mut grad_candidate = vec![vec![0.0; dim]; n];
    for i in 0..n {
        let neg = negatives[i];
        let view = TripletView {
            s_pos: dot(&anchors[i], &candidates[i]),
            s_neg: dot(&anchors[i], &candidates[neg]),
            relatives: &relatives[i],
            image_anchor,
            anchor_index: i,
        };
        let w = weigh(&view);
        if w.triplet == 0.0 {
            continue;
        }
        let c = contribution(w, &anchors[i], &candidates[i], &candidates[neg]);
        axpy(&mut grad_anchor[i], 1.0, &c.anchor);
        axpy(&mut grad_candidate[i], 1.0, &c.positive);
        axpy(&mut grad_candidate[neg], 1.0, &c.negative);
    }
    (grad_anchor, grad_candidate)
}

fn check_mined(batch: &EmbeddingBatch, mined: &MinedTripletSet) -> Result<()> {
    let n = batch.len();
    if mined.hard_neg_text.len() != n
        || mined.hard_neg_image.len() != n
        || mined.image_relatives.len() != n
        || mined.text_relatives.len() != n
    {
        return Err(Error::Mining(format!(
            "mined triplets cover {} anchors, batch has {n}",
            mined.len()
        )));
    }
    if let Some(&bad) = mined
        .hard_neg_text
        .iter()
        .chain(&mined.hard_neg_image)
        .find(|&&k| k >= n)
    {
        return Err(Error::Mining(format!("negative index {bad} out of range")));
    }
    Ok(())
}

/// Batch gradient with a caller-supplied weighting rule.
///
/// Both families are accumulated into separate buffers in ascending anchor
/// order and summed image family first, so the result is bit-reproducible
/// and exactly mirrors under a modality swap.
pub fn batch_gradient_with<F>(
    batch: &EmbeddingBatch,
    mined: &MinedTripletSet,
    mut weigh: F,
) -> Result<BatchGradient>
where
    F: FnMut(&TripletView<'_>) -> TripletWeights,
{
    check_mined(batch, mined)?;
    let (img_x, img_y) = accumulate_family(
        &batch.x,
        &batch.y,
        &mined.hard_neg_text,
        &mined.image_relatives,
        true,
        &mut weigh,
    );
    let (txt_y, txt_x) = accumulate_family(
        &batch.y,
        &batch.x,
        &mined.hard_neg_image,
        &mined.text_relatives,
        false,
        &mut weigh,
    );
    let mut grad = BatchGradient {
        grad_x: img_x,
        grad_y: img_y,
    };
    grad.add_assign(&BatchGradient {
        grad_x: txt_x,
        grad_y: txt_y,
    });
    Ok(grad)
}

pub fn batch_gradient(
    obj: &GradientObjective,
    batch: &EmbeddingBatch,
    mined: &MinedTripletSet,
) -> Result<BatchGradient> {
    batch_gradient_with(batch, mined, |t| {
        objective_weights(obj, t.s_pos, t.s_neg, t.relatives)
    })
}

/// Chain rule through `v ↦ v/‖v‖`: removes the radial component and
/// divides by the norm.
pub fn project_through_normalization(raw: &[f64], grad_at_unit: &[f64]) -> Result<Vec<f64>> {
    if raw.len() != grad_at_unit.len() {
        return Err(Error::Shape(format!(
            "raw vector has dim {}, gradient has dim {}",
            raw.len(),
            grad_at_unit.len()
        )));
    }
    let n = norm(raw);
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Normalization { norm: n });
    }
    let u: Vec<f64> = raw.iter().map(|v| v / n).collect();
    let radial = dot(&u, grad_at_unit);
    Ok(grad_at_unit
        .iter()
        .zip(&u)
        .map(|(g, ui)| (g - ui * radial) / n)
        .collect())
}
