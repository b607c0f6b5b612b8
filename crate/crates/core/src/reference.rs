//! Reference losses for the integrable combinations, and the central
//! finite-difference oracle that checks assembled gradients against them.
//!
//! Mining is frozen: the losses take the mined indices of the unperturbed
//! batch and only recompute similarities, so a perturbation never changes
//! which negative a triplet uses. Perturbed embeddings are not
//! re-normalized.

use crate::error::{Error, Result};
use crate::gradient::{batch_gradient, BatchGradient};
use crate::linalg::dot;
use crate::mining::{EmbeddingBatch, MinedTripletSet};
use crate::weights::{GradientObjective, PairWeightKind, TripletWeightKind};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const HINGE_BAND: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LossValue(pub f64);

impl LossValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `(s_pos, s_neg)` of every triplet, image-anchor family first.
pub fn triplet_similarities(batch: &EmbeddingBatch, mined: &MinedTripletSet) -> Vec<(f64, f64)> {
    let image = (0..batch.len()).map(|i| {
        (
            dot(&batch.x[i], &batch.y[i]),
            dot(&batch.x[i], &batch.y[mined.hard_neg_text[i]]),
        )
    });
    let text = (0..batch.len()).map(|j| {
        (
            dot(&batch.y[j], &batch.x[j]),
            dot(&batch.y[j], &batch.x[mined.hard_neg_image[j]]),
        )
    });
    image.chain(text).collect()
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Hinge triplet loss summed over both triplet families.
pub fn triplet_loss(batch: &EmbeddingBatch, mined: &MinedTripletSet, margin: f64) -> LossValue {
    LossValue(
        triplet_similarities(batch, mined)
            .into_iter()
            .map(|(sp, sn)| (margin + sn - sp).max(0.0))
            .sum(),
    )
}

/// Hard-negative NT-Xent: `−log softmax` of the positive against the mined
/// negative, summed over both families. Evaluated as
/// `softplus(τ(s_neg − s_pos))`.
pub fn nt_xent_loss(batch: &EmbeddingBatch, mined: &MinedTripletSet, scale: f64) -> LossValue {
    LossValue(
        triplet_similarities(batch, mined)
            .into_iter()
            .map(|(sp, sn)| softplus(scale * (sn - sp)))
            .sum(),
    )
}

fn sigmoid_pair_terms(sp: f64, sn: f64, alpha: f64, beta: f64, lambda: f64) -> f64 {
    softplus(-alpha * (sp - lambda)) / alpha + softplus(beta * (sn - lambda)) / beta
}

/// Antiderivative of the sigmoid pair weights: per triplet
/// `(1/α)·log(1+exp(−α(s_pos−λ))) + (1/β)·log(1+exp(β(s_neg−λ)))`.
pub fn sigmoid_pair_loss(
    batch: &EmbeddingBatch,
    mined: &MinedTripletSet,
    alpha: f64,
    beta: f64,
    lambda: f64,
) -> LossValue {
    LossValue(
        triplet_similarities(batch, mined)
            .into_iter()
            .map(|(sp, sn)| sigmoid_pair_terms(sp, sn, alpha, beta, lambda))
            .sum(),
    )
}

/// [`sigmoid_pair_loss`] with each triplet switched on only where the hinge
/// `m + s_neg − s_pos > 0` is active. Away from the hinge boundary its
/// gradient is the `(Con, Sig)` field.
pub fn gated_sigmoid_pair_loss(
    batch: &EmbeddingBatch,
    mined: &MinedTripletSet,
    margin: f64,
    alpha: f64,
    beta: f64,
    lambda: f64,
) -> LossValue {
    LossValue(
        triplet_similarities(batch, mined)
            .into_iter()
            .filter(|&(sp, sn)| margin + sn - sp > 0.0)
            .map(|(sp, sn)| sigmoid_pair_terms(sp, sn, alpha, beta, lambda))
            .sum(),
    )
}

/// Central differences of `loss` with respect to every embedding coordinate.
pub fn fd_gradient<F>(loss: F, batch: &EmbeddingBatch, h: f64) -> Result<BatchGradient>
where
    F: Fn(&EmbeddingBatch) -> f64,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    let n = batch.len();
    let dim = batch.dim();
    let mut grad = BatchGradient::zeros(n, dim);
    let mut probe = batch.clone();
    let eval = |b: &EmbeddingBatch| {
        let v = loss(b);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Oracle(format!("loss evaluated to {v}")))
        }
    };
    for side in 0..2 {
        for i in 0..n {
            for k in 0..dim {
                let orig = if side == 0 {
                    batch.x[i][k]
                } else {
                    batch.y[i][k]
                };
                let set = |b: &mut EmbeddingBatch, v: f64| {
                    if side == 0 {
                        b.x[i][k] = v;
                    } else {
                        b.y[i][k] = v;
                    }
                };
                set(&mut probe, orig + h);
                let plus = eval(&probe)?;
                set(&mut probe, orig - h);
                let minus = eval(&probe)?;
                set(&mut probe, orig);
                let g = (plus - minus) / (2.0 * h);
                if side == 0 {
                    grad.grad_x[i][k] = g;
                } else {
                    grad.grad_y[i][k] = g;
                }
            }
        }
    }
    Ok(grad)
}

/// Largest absolute entry difference, divided by the largest entry of
/// `reference` (absolute when the reference is all zeros).
pub fn max_relative_error(candidate: &BatchGradient, reference: &BatchGradient) -> f64 {
    let a = candidate.flatten();
    let b = reference.flatten();
    assert_eq!(a.len(), b.len(), "gradient shapes differ");
    let diff = a
        .iter()
        .zip(&b)
        .fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()));
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale > 1e-12 {
        diff / scale
    } else {
        diff
    }
}

/// A scalar loss whose gradient is a known multiple of an objective's
/// assembled gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceLoss {
    Triplet {
        margin: f64,
    },
    NtXent {
        scale: f64,
    },
    GatedSigmoidPair {
        margin: f64,
        alpha: f64,
        beta: f64,
        lambda: f64,
    },
}

impl ReferenceLoss {
    /// The reference loss for `obj`, if the combination has one.
    pub fn for_objective(obj: &GradientObjective) -> Option<Self> {
        match (obj.triplet_weight, obj.pair_weight) {
            (TripletWeightKind::Con { margin }, PairWeightKind::Con) => {
                Some(ReferenceLoss::Triplet { margin })
            }
            (TripletWeightKind::Nca { scale }, PairWeightKind::Con) => {
                Some(ReferenceLoss::NtXent { scale })
            }
            (
                TripletWeightKind::Con { margin },
                PairWeightKind::Sig {
                    alpha,
                    beta,
                    lambda,
                },
            ) => Some(ReferenceLoss::GatedSigmoidPair {
                margin,
                alpha,
                beta,
                lambda,
            }),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReferenceLoss::Triplet { .. } => "triplet",
            ReferenceLoss::NtXent { .. } => "nt-xent",
            ReferenceLoss::GatedSigmoidPair { .. } => "gated sigmoid pair",
        }
    }

    pub fn evaluate(&self, batch: &EmbeddingBatch, mined: &MinedTripletSet) -> f64 {
        match *self {
            ReferenceLoss::Triplet { margin } => triplet_loss(batch, mined, margin).0,
            ReferenceLoss::NtXent { scale } => nt_xent_loss(batch, mined, scale).0,
            ReferenceLoss::GatedSigmoidPair {
                margin,
                alpha,
                beta,
                lambda,
            } => gated_sigmoid_pair_loss(batch, mined, margin, alpha, beta, lambda).0,
        }
    }

    /// `∇loss = gradient_scale · batch_gradient`. The NT-Xent derivative
    /// carries the factor `τ` in front of its triplet weight.
    pub fn gradient_scale(&self) -> f64 {
        match *self {
            ReferenceLoss::NtXent { scale } => scale,
            _ => 1.0,
        }
    }

    /// Hinge margin, for losses with a non-smooth boundary.
    pub fn hinge_margin(&self) -> Option<f64> {
        match *self {
            ReferenceLoss::Triplet { margin } | ReferenceLoss::GatedSigmoidPair { margin, .. } => {
                Some(margin)
            }
            ReferenceLoss::NtXent { .. } => None,
        }
    }

    /// Whether any triplet sits within `band` of the hinge boundary.
    pub fn near_boundary(
        &self,
        batch: &EmbeddingBatch,
        mined: &MinedTripletSet,
        band: f64,
    ) -> bool {
        match self.hinge_margin() {
            Some(m) => triplet_similarities(batch, mined)
                .into_iter()
                .any(|(sp, sn)| (m + sn - sp).abs() < band),
            None => false,
        }
    }
}

/// Outcome of checking one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceCheck {
    pub relative_error: f64,
    pub loss: f64,
}

/// Compares the assembled gradient of `obj` against finite differences of
/// its reference loss on one batch. Returns `None` when the combination has
/// no reference loss.
pub fn check_equivalence(
    obj: &GradientObjective,
    batch: &EmbeddingBatch,
    mined: &MinedTripletSet,
    h: f64,
) -> Result<Option<EquivalenceCheck>> {
    let Some(reference) = ReferenceLoss::for_objective(obj) else {
        return Ok(None);
    };
    let mut assembled = batch_gradient(obj, batch, mined)?;
    assembled.scale(reference.gradient_scale());
    let numeric = fd_gradient(|b| reference.evaluate(b, mined), batch, h)?;
    Ok(Some(EquivalenceCheck {
        relative_error: max_relative_error(&assembled, &numeric),
        loss: reference.evaluate(batch, mined),
    }))
}
