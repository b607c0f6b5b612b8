//! Triplet weights and pair weights.
//!
//! Every triplet-family loss in this crate is described by the scalars that
//! multiply the unit gradient directions of its triplets. A *triplet weight*
//! depends on both the positive and the negative similarity of a triplet and
//! scales the whole triplet's gradient. A *pair weight* depends on a single
//! pair's similarity (plus, for the multi-similarity variants, the relative
//! similarities of other pairs sharing the anchor) and scales only that
//! pair's direction.
//!
//! All functions here are pure and total on similarities in `[-1, 1]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_SCALE: f64 = 10.0;
pub const DEFAULT_ALPHA: f64 = 2.0;
pub const DEFAULT_BETA: f64 = 10.0;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Weight applied to a whole triplet `(anchor, positive, negative)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TripletWeightKind {
    /// Hinge gate `δ(m + s_neg − s_pos)`.
    Con { margin: f64 },
    /// Softmax over the positive and the mined negative.
    Nca { scale: f64 },
    /// Like `Nca` but with contours on circles around `(1, 0)`.
    Cir { scale: f64 },
}

/// Weights applied separately to the positive and the negative pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairWeightKind {
    Con,
    Lin,
    Sig {
        alpha: f64,
        beta: f64,
        lambda: f64,
    },
    SigMs {
        alpha: f64,
        beta: f64,
        lambda: f64,
        epsilon: f64,
    },
    LinMs {
        epsilon: f64,
    },
}

/// Relative similarities of the anchor's other positives and negatives,
/// already filtered by the admission rules in [`crate::mining`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelativeSimilarities {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl RelativeSimilarities {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }
}

/// The three triplet-weight families, without hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletFamily {
    Con,
    Nca,
    Cir,
}

/// The five pair-weight families, without hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairFamily {
    Con,
    Lin,
    Sig,
    SigMs,
    LinMs,
}

impl TripletFamily {
    pub const ALL: [TripletFamily; 3] =
        [TripletFamily::Con, TripletFamily::Nca, TripletFamily::Cir];

    pub fn as_str(self) -> &'static str {
        match self {
            TripletFamily::Con => "con",
            TripletFamily::Nca => "nca",
            TripletFamily::Cir => "cir",
        }
    }
}

impl PairFamily {
    pub const ALL: [PairFamily; 5] = [
        PairFamily::Con,
        PairFamily::Lin,
        PairFamily::Sig,
        PairFamily::SigMs,
        PairFamily::LinMs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PairFamily::Con => "con",
            PairFamily::Lin => "lin",
            PairFamily::Sig => "sig",
            PairFamily::SigMs => "sig-ms",
            PairFamily::LinMs => "lin-ms",
        }
    }
}

impl fmt::Display for TripletFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for PairFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TripletFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "con" => Ok(TripletFamily::Con),
            "nca" => Ok(TripletFamily::Nca),
            "cir" => Ok(TripletFamily::Cir),
            other => Err(Error::InvalidArgument(format!(
                "unknown triplet weight '{other}' (expected con, nca or cir)"
            ))),
        }
    }
}

impl std::str::FromStr for PairFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "con" => Ok(PairFamily::Con),
            "lin" => Ok(PairFamily::Lin),
            "sig" => Ok(PairFamily::Sig),
            "sig-ms" => Ok(PairFamily::SigMs),
            "lin-ms" => Ok(PairFamily::LinMs),
            other => Err(Error::InvalidArgument(format!(
                "unknown pair weight '{other}' (expected con, lin, sig, sig-ms or lin-ms)"
            ))),
        }
    }
}

/// Hyperparameters shared by every combination in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub margin: f64,
    pub scale: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            scale: DEFAULT_SCALE,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl TripletWeightKind {
    pub fn from_family(family: TripletFamily, hp: &Hyperparameters) -> Self {
        match family {
            TripletFamily::Con => TripletWeightKind::Con { margin: hp.margin },
            TripletFamily::Nca => TripletWeightKind::Nca { scale: hp.scale },
            TripletFamily::Cir => TripletWeightKind::Cir { scale: hp.scale },
        }
    }

    pub fn family(&self) -> TripletFamily {
        match self {
            TripletWeightKind::Con { .. } => TripletFamily::Con,
            TripletWeightKind::Nca { .. } => TripletFamily::Nca,
            TripletWeightKind::Cir { .. } => TripletFamily::Cir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TripletWeightKind::Con { margin } if !(0.0..=2.0).contains(&margin) => Err(
                Error::InvalidArgument(format!("margin must lie in [0, 2], got {margin}")),
            ),
            TripletWeightKind::Nca { scale } | TripletWeightKind::Cir { scale }
                if !(scale > 0.0 && scale.is_finite()) =>
            {
                Err(Error::InvalidArgument(format!(
                    "scale must be positive, got {scale}"
                )))
            }
            _ => Ok(()),
        }
    }
}

impl PairWeightKind {
    pub fn from_family(family: PairFamily, hp: &Hyperparameters) -> Self {
        match family {
            PairFamily::Con => PairWeightKind::Con,
            PairFamily::Lin => PairWeightKind::Lin,
            PairFamily::Sig => PairWeightKind::Sig {
                alpha: hp.alpha,
                beta: hp.beta,
                lambda: hp.lambda,
            },
            PairFamily::SigMs => PairWeightKind::SigMs {
                alpha: hp.alpha,
                beta: hp.beta,
                lambda: hp.lambda,
                epsilon: hp.epsilon,
            },
            PairFamily::LinMs => PairWeightKind::LinMs {
                epsilon: hp.epsilon,
            },
        }
    }

    pub fn family(&self) -> PairFamily {
        match self {
            PairWeightKind::Con => PairFamily::Con,
            PairWeightKind::Lin => PairFamily::Lin,
            PairWeightKind::Sig { .. } => PairFamily::Sig,
            PairWeightKind::SigMs { .. } => PairFamily::SigMs,
            PairWeightKind::LinMs { .. } => PairFamily::LinMs,
        }
    }

    /// Admission slack for the relative-similarity sets, for the variants
    /// that use them.
    pub fn relative_margin(&self) -> Option<f64> {
        match *self {
            PairWeightKind::SigMs { epsilon, .. } | PairWeightKind::LinMs { epsilon } => {
                Some(epsilon)
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_sig = |alpha: f64, beta: f64, lambda: f64| {
            if !(alpha > 0.0 && beta > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "alpha and beta must be positive, got alpha={alpha} beta={beta}"
                )));
            }
            if !(-1.0..=1.0).contains(&lambda) {
                return Err(Error::InvalidArgument(format!(
                    "lambda must lie in [-1, 1], got {lambda}"
                )));
            }
            Ok(())
        };
        let check_eps = |epsilon: f64| {
            if epsilon.is_nan() || epsilon < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "epsilon must be non-negative, got {epsilon}"
                )));
            }
            Ok(())
        };
        match *self {
            PairWeightKind::Con | PairWeightKind::Lin => Ok(()),
            PairWeightKind::Sig {
                alpha,
                beta,
                lambda,
            } => check_sig(alpha, beta, lambda),
            PairWeightKind::SigMs {
                alpha,
                beta,
                lambda,
                epsilon,
            } => {
                check_sig(alpha, beta, lambda)?;
                check_eps(epsilon)
            }
            PairWeightKind::LinMs { epsilon } => check_eps(epsilon),
        }
    }
}

/// One point of the 3 × 5 grid of (triplet weight, pair weight) combinations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientObjective {
    pub triplet_weight: TripletWeightKind,
    pub pair_weight: PairWeightKind,
}

impl GradientObjective {
    pub fn new(triplet_weight: TripletWeightKind, pair_weight: PairWeightKind) -> Result<Self> {
        triplet_weight.validate()?;
        pair_weight.validate()?;
        Ok(Self {
            triplet_weight,
            pair_weight,
        })
    }

    pub fn from_families(
        triplet: TripletFamily,
        pair: PairFamily,
        hp: &Hyperparameters,
    ) -> Result<Self> {
        Self::new(
            TripletWeightKind::from_family(triplet, hp),
            PairWeightKind::from_family(pair, hp),
        )
    }

    /// All 15 combinations, triplet family major.
    pub fn grid(hp: &Hyperparameters) -> Result<Vec<Self>> {
        TripletFamily::ALL
            .iter()
            .flat_map(|&t| PairFamily::ALL.iter().map(move |&p| (t, p)))
            .map(|(t, p)| Self::from_families(t, p, hp))
            .collect()
    }

    pub fn families(&self) -> (TripletFamily, PairFamily) {
        (self.triplet_weight.family(), self.pair_weight.family())
    }
}

impl fmt::Display for GradientObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (t, p) = self.families();
        write!(f, "T^{t}/P^{p}")
    }
}

/// Strict Heaviside step: `δ(0) = 0`.
#[inline]
fn heaviside(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `1 / (1 + exp(z))`
#[inline]
fn logistic_complement(z: f64) -> f64 {
    1.0 / (1.0 + z.exp())
}

pub fn triplet_weight(kind: &TripletWeightKind, s_pos: f64, s_neg: f64) -> f64 {
    match *kind {
        TripletWeightKind::Con { margin } => heaviside(margin + s_neg - s_pos),
        TripletWeightKind::Nca { scale } => logistic_complement(scale * (s_pos - s_neg)),
        TripletWeightKind::Cir { scale } => {
            logistic_complement(scale * (s_pos * (2.0 - s_pos) - s_neg * s_neg))
        }
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        None
    } else {
        Some(values.sum::<f64>() / n as f64)
    }
}

/// Relative term `m₊^sig`; 1 for an empty set.
pub fn relative_term_sig_positive(alpha: f64, s_pos: f64, positives: &[f64]) -> f64 {
    mean(positives.iter().map(|r| (alpha * (s_pos - r)).exp())).unwrap_or(1.0)
}

/// Relative term `m₋^sig`; 1 for an empty set.
pub fn relative_term_sig_negative(beta: f64, s_neg: f64, negatives: &[f64]) -> f64 {
    mean(negatives.iter().map(|r| (-beta * (s_neg - r)).exp())).unwrap_or(1.0)
}

/// Relative term `m₊^lin`; 0 for an empty set.
pub fn relative_term_lin_positive(s_pos: f64, positives: &[f64]) -> f64 {
    mean(positives.iter().map(|r| s_pos - r)).unwrap_or(0.0)
}

/// Relative term `m₋^lin`; 0 for an empty set.
pub fn relative_term_lin_negative(s_neg: f64, negatives: &[f64]) -> f64 {
    mean(negatives.iter().map(|r| s_neg - r)).unwrap_or(0.0)
}

/// Weight on the positive pair. Never negative.
pub fn pair_weight_positive(kind: &PairWeightKind, s_pos: f64, rel: &RelativeSimilarities) -> f64 {
    let w = match *kind {
        PairWeightKind::Con => 1.0,
        PairWeightKind::Lin => 1.0 - s_pos,
        PairWeightKind::Sig { alpha, lambda, .. } => 1.0 / (1.0 + (alpha * (s_pos - lambda)).exp()),
        PairWeightKind::SigMs { alpha, lambda, .. } => {
            let m = relative_term_sig_positive(alpha, s_pos, &rel.positives);
            1.0 / (m + (alpha * (s_pos - lambda)).exp())
        }
        PairWeightKind::LinMs { .. } => {
            let m = relative_term_lin_positive(s_pos, &rel.positives);
            (1.0 - m) * (1.0 - s_pos)
        }
    };
    w.max(0.0)
}

/// Weight on the negative pair. Never negative: the linear variants clamp
/// at zero for negative similarities.
pub fn pair_weight_negative(kind: &PairWeightKind, s_neg: f64, rel: &RelativeSimilarities) -> f64 {
    let w = match *kind {
        PairWeightKind::Con => 1.0,
        PairWeightKind::Lin => s_neg,
        PairWeightKind::Sig { beta, lambda, .. } => 1.0 / (1.0 + (-beta * (s_neg - lambda)).exp()),
        PairWeightKind::SigMs { beta, lambda, .. } => {
            let m = relative_term_sig_negative(beta, s_neg, &rel.negatives);
            1.0 / (m + (-beta * (s_neg - lambda)).exp())
        }
        PairWeightKind::LinMs { .. } => {
            let m = relative_term_lin_negative(s_neg, &rel.negatives);
            (1.0 + m) * s_neg
        }
    };
    w.max(0.0)
}

pub const NEW_COMBINATION: &str = "New";

/// Established loss name for the combination, if there is one.
pub fn combination_name(obj: &GradientObjective) -> Option<&'static str> {
    match obj.families() {
        (TripletFamily::Con, PairFamily::Con) => Some("triplet loss"),
        (TripletFamily::Nca, PairFamily::Con) => Some("NT-Xent/NCA"),
        (TripletFamily::Con, PairFamily::SigMs) => Some("MS loss"),
        (TripletFamily::Cir, PairFamily::Lin) => Some("circle loss"),
        _ => None,
    }
}

/// Like [`combination_name`] but labels unexplored combinations `"New"`.
pub fn combination_label(obj: &GradientObjective) -> &'static str {
    combination_name(obj).unwrap_or(NEW_COMBINATION)
}
