//! Gradient equivalence report: for every combination with a reference
//! loss, the assembled gradient is compared with central finite differences
//! of that loss over random batches. Combinations without a loss get the
//! structural checks instead (exact modality mirroring, span conditions).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::random_unit_batch;
use crate::error::{Error, Result};
use crate::gradient::{batch_gradient, triplet_gradient};
use crate::linalg::{axpy, dot, norm};
use crate::mining::{mine_hard_negatives, similarity_matrix, EmbeddingBatch, MinedTripletSet};
use crate::reference::{check_equivalence, ReferenceLoss, DEFAULT_STEP, HINGE_BAND};
use crate::weights::{
    combination_label, GradientObjective, Hyperparameters, PairFamily, TripletFamily,
};

pub const EQUIVALENCE_TOLERANCE: f64 = 1e-5;
const SPAN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSettings {
    pub batches: usize,
    pub batch_size: usize,
    pub dim: usize,
    pub step: f64,
    pub band: f64,
    pub tolerance: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            batches: 100,
            batch_size: 16,
            dim: 8,
            step: DEFAULT_STEP,
            band: HINGE_BAND,
            tolerance: EQUIVALENCE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckKind {
    /// Finite differences of a reference loss.
    Reference {
        loss: &'static str,
        max_relative_error: f64,
        skipped_near_hinge: usize,
    },
    /// No loss exists; structural invariants only.
    Structural {
        max_span_residual: f64,
        mirror_exact: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub triplet_weight: TripletFamily,
    pub pair_weight: PairFamily,
    pub name: &'static str,
    pub batches: usize,
    pub kind: CheckKind,
    pub passed: bool,
}

/// Draws a random batch and mines it, resampling while any triplet sits
/// within `band` of the objective's hinge boundary.
pub fn sample_checked_batch(
    rng: &mut ChaCha8Rng,
    obj: &GradientObjective,
    settings: &CheckSettings,
    skipped: &mut usize,
) -> Result<(EmbeddingBatch, MinedTripletSet)> {
    let reference = ReferenceLoss::for_objective(obj);
    for _ in 0..10_000 {
        let batch = random_unit_batch(rng, settings.batch_size, settings.dim);
        let mined = mine_hard_negatives(
            &similarity_matrix(&batch),
            &batch.concept_ids,
            obj.pair_weight.relative_margin(),
        )?;
        if reference.is_some_and(|r| r.near_boundary(&batch, &mined, settings.band)) {
            *skipped += 1;
            continue;
        }
        return Ok((batch, mined));
    }
    Err(Error::Oracle(
        "could not draw a batch away from the hinge boundary".into(),
    ))
}

/// Distance from `v` to span{a, b}, relative to ‖v‖.
fn span_residual(v: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let nv = norm(v);
    if nv == 0.0 {
        return 0.0;
    }
    // Gram–Schmidt on {a, b}
    let na = norm(a);
    let ea: Vec<f64> = a.iter().map(|x| x / na).collect();
    let mut r = v.to_vec();
    let ra = dot(&r, &ea);
    axpy(&mut r, -ra, &ea);
    let mut eb = b.to_vec();
    let ba = dot(&eb, &ea);
    axpy(&mut eb, -ba, &ea);
    let nb = norm(&eb);
    if nb > 1e-12 {
        eb.iter_mut().for_each(|x| *x /= nb);
        let rb = dot(&r, &eb);
        axpy(&mut r, -rb, &eb);
    }
    norm(&r) / nv
}

/// Largest relative distance of a triplet contribution from its allowed
/// span: the anchor's part must lie in span{positive, negative}, the
/// positive's and negative's parts along the anchor.
pub fn max_span_residual(
    obj: &GradientObjective,
    batch: &EmbeddingBatch,
    mined: &MinedTripletSet,
) -> f64 {
    let mut worst = 0.0_f64;
    let families = [
        (
            &batch.x,
            &batch.y,
            &mined.hard_neg_text,
            &mined.image_relatives,
        ),
        (
            &batch.y,
            &batch.x,
            &mined.hard_neg_image,
            &mined.text_relatives,
        ),
    ];
    for (anchors, candidates, negatives, relatives) in families {
        for i in 0..anchors.len() {
            let (a, p, n) = (&anchors[i], &candidates[i], &candidates[negatives[i]]);
            let c = triplet_gradient(obj, a, p, n, &relatives[i]);
            worst = worst
                .max(span_residual(&c.anchor, p, n))
                .max(span_residual(&c.positive, a, a))
                .max(span_residual(&c.negative, a, a));
        }
    }
    worst
}

/// Whether exchanging the modalities exchanges the gradients bit for bit.
pub fn mirrors_exactly(obj: &GradientObjective, batch: &EmbeddingBatch) -> Result<bool> {
    let eps = obj.pair_weight.relative_margin();
    let mined = mine_hard_negatives(&similarity_matrix(batch), &batch.concept_ids, eps)?;
    let swapped = batch.swapped();
    let mined_swapped =
        mine_hard_negatives(&similarity_matrix(&swapped), &swapped.concept_ids, eps)?;
    if mined_swapped != mined.swapped() {
        return Ok(false);
    }
    let g = batch_gradient(obj, batch, &mined)?;
    let gs = batch_gradient(obj, &swapped, &mined_swapped)?;
    Ok(gs == g.swapped())
}

pub fn check_objective(
    obj: &GradientObjective,
    settings: &CheckSettings,
    seed: u64,
) -> Result<CheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, p) = obj.families();
    let reference = ReferenceLoss::for_objective(obj);
    let mut skipped = 0usize;
    let mut worst_error = 0.0_f64;
    let mut worst_span = 0.0_f64;
    let mut mirror = true;
    for _ in 0..settings.batches {
        let (batch, mined) = sample_checked_batch(&mut rng, obj, settings, &mut skipped)?;
        match reference {
            Some(_) => {
                let check = check_equivalence(obj, &batch, &mined, settings.step)?
                    .expect("reference exists");
                worst_error = worst_error.max(check.relative_error);
            }
            None => {
                worst_span = worst_span.max(max_span_residual(obj, &batch, &mined));
                mirror &= mirrors_exactly(obj, &batch)?;
            }
        }
    }
    let (kind, passed) = match reference {
        Some(r) => (
            CheckKind::Reference {
                loss: r.name(),
                max_relative_error: worst_error,
                skipped_near_hinge: skipped,
            },
            worst_error <= settings.tolerance,
        ),
        None => (
            CheckKind::Structural {
                max_span_residual: worst_span,
                mirror_exact: mirror,
            },
            mirror && worst_span <= SPAN_TOLERANCE,
        ),
    };
    Ok(CheckRow {
        triplet_weight: t,
        pair_weight: p,
        name: combination_label(obj),
        batches: settings.batches,
        kind,
        passed,
    })
}

pub fn check_all(
    hp: &Hyperparameters,
    settings: &CheckSettings,
    seed: u64,
) -> Result<Vec<CheckRow>> {
    GradientObjective::grid(hp)?
        .iter()
        .map(|o| check_objective(o, settings, seed))
        .collect()
}

pub fn check_csv(rows: &[CheckRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "triplet_weight",
        "pair_weight",
        "name",
        "oracle",
        "batches",
        "max_relative_error",
        "max_span_residual",
        "mirror_exact",
        "passed",
    ])?;
    for r in rows {
        let (oracle, err, span, mirror) = match &r.kind {
            CheckKind::Reference {
                loss,
                max_relative_error,
                ..
            } => (
                loss.to_string(),
                format!("{max_relative_error:.3e}"),
                String::new(),
                String::new(),
            ),
            CheckKind::Structural {
                max_span_residual,
                mirror_exact,
            } => (
                "structural".to_string(),
                String::new(),
                format!("{max_span_residual:.3e}"),
                mirror_exact.to_string(),
            ),
        };
        w.write_record([
            r.triplet_weight.as_str(),
            r.pair_weight.as_str(),
            r.name,
            &oracle,
            &r.batches.to_string(),
            &err,
            &span,
            &mirror,
            &r.passed.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
