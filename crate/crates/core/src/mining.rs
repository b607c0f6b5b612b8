//! Batch similarities, hard-negative mining and the relative-similarity
//! sets used by the multi-similarity pair weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::weights::RelativeSimilarities;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Paired, L2-normalized image-side and text-side embeddings. Index `i` of
/// `x` and `y` is a ground-truth pair; items sharing a concept id are
/// positives of each other.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub concept_ids: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, concept_ids: Vec<usize>) -> Result<Self> {
        let batch = Self { x, y, concept_ids };
        batch.validate()?;
        Ok(batch)
    }

    /// Normalizes raw vectors and builds a batch.
    pub fn from_raw(x: &[Vec<f64>], y: &[Vec<f64>], concept_ids: Vec<usize>) -> Result<Self> {
        let x = x.iter().map(|v| l2_normalize(v)).collect::<Result<_>>()?;
        let y = y.iter().map(|v| l2_normalize(v)).collect::<Result<_>>()?;
        Self::new(x, y, concept_ids)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.y.len() != n || self.concept_ids.len() != n {
            return Err(Error::Shape(format!(
                "batch sizes differ: x={} y={} ids={}",
                n,
                self.y.len(),
                self.concept_ids.len()
            )));
        }
        let dim = self.dim();
        for (side, vs) in [("x", &self.x), ("y", &self.y)] {
            for (i, v) in vs.iter().enumerate() {
                if v.len() != dim {
                    return Err(Error::Shape(format!(
                        "{side}[{i}] has dim {} (expected {dim})",
                        v.len()
                    )));
                }
                let nv = norm(v);
                if (nv - 1.0).abs() > UNIT_NORM_TOLERANCE {
                    return Err(Error::InvalidArgument(format!(
                        "{side}[{i}] is not unit norm (|v| = {nv})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// The same batch with the modalities exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
            concept_ids: self.concept_ids.clone(),
        }
    }
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Normalization { norm: n });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Square matrix with `s[i][j] = x_i · y_j`. Rows are image anchors,
/// columns are text anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("similarity matrix must be square".into()));
        }
        Ok(Self {
            n,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.n {
            for j in 0..self.n {
                data[j * self.n + i] = self.get(i, j);
            }
        }
        Self { n: self.n, data }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }
}

pub fn similarity_matrix(batch: &EmbeddingBatch) -> SimilarityMatrix {
    let n = batch.len();
    let mut data = Vec::with_capacity(n * n);
    for xi in &batch.x {
        for yj in &batch.y {
            data.push(dot(xi, yj));
        }
    }
    SimilarityMatrix { n, data }
}

/// Which side of the batch an anchor comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    /// Image `i`, scored against every text along row `i`.
    Image(usize),
    /// Text `j`, scored against every image along column `j`.
    Text(usize),
}

/// Hard negatives for both triplet families plus their relative sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedTripletSet {
    /// For image anchor `i`, the text index of its hardest negative.
    pub hard_neg_text: Vec<usize>,
    /// For text anchor `j`, the image index of its hardest negative.
    pub hard_neg_image: Vec<usize>,
    pub image_relatives: Vec<RelativeSimilarities>,
    pub text_relatives: Vec<RelativeSimilarities>,
}

impl MinedTripletSet {
    pub fn len(&self) -> usize {
        self.hard_neg_text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard_neg_text.is_empty()
    }

    /// Mining result for the modality-swapped batch.
    pub fn swapped(&self) -> Self {
        Self {
            hard_neg_text: self.hard_neg_image.clone(),
            hard_neg_image: self.hard_neg_text.clone(),
            image_relatives: self.text_relatives.clone(),
            text_relatives: self.image_relatives.clone(),
        }
    }
}

/// Highest-similarity candidate with a different concept; lowest index on ties.
fn hardest_negative(sims: &[f64], concept_ids: &[usize], anchor_concept: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, (&s, &c)) in sims.iter().zip(concept_ids).enumerate() {
        if c == anchor_concept {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((j, s)),
        }
    }
    best.map(|(j, _)| j)
}

fn relative_sets_along(
    sims: &[f64],
    concept_ids: &[usize],
    anchor_concept: usize,
    selected_pos: usize,
    mined_neg: usize,
    epsilon: f64,
) -> RelativeSimilarities {
    let mut hardest_neg = f64::NEG_INFINITY;
    let mut easiest_pos = f64::INFINITY;
    for (&s, &c) in sims.iter().zip(concept_ids) {
        if c == anchor_concept {
            easiest_pos = easiest_pos.min(s);
        } else {
            hardest_neg = hardest_neg.max(s);
        }
    }
    let mut rel = RelativeSimilarities::empty();
    for (k, (&s, &c)) in sims.iter().zip(concept_ids).enumerate() {
        if c == anchor_concept {
            if k != selected_pos && s < hardest_neg + epsilon {
                rel.positives.push(s);
            }
        } else if k != mined_neg && s > easiest_pos - epsilon {
            rel.negatives.push(s);
        }
    }
    rel
}

/// Relative-similarity sets for one anchor.
///
/// Candidate positives are the anchor's same-concept similarities other
/// than the selected pair; a candidate is admitted when it is below the
/// anchor's hardest negative similarity plus `epsilon`. Candidate negatives
/// are different-concept similarities other than the mined negative,
/// admitted when above the anchor's easiest positive similarity minus
/// `epsilon`. The hardest/easiest extremes run over all of the anchor's
/// pairs, including the selected and mined ones.
pub fn relative_sets(
    s: &SimilarityMatrix,
    concept_ids: &[usize],
    anchor: Anchor,
    selected_pos: usize,
    mined_neg: usize,
    epsilon: f64,
) -> RelativeSimilarities {
    match anchor {
        Anchor::Image(i) => relative_sets_along(
            s.row(i),
            concept_ids,
            concept_ids[i],
            selected_pos,
            mined_neg,
            epsilon,
        ),
        Anchor::Text(j) => relative_sets_along(
            &s.column(j),
            concept_ids,
            concept_ids[j],
            selected_pos,
            mined_neg,
            epsilon,
        ),
    }
}

/// Mines one hard negative per anchor in both directions. When
/// `relative_margin` is given, the relative-similarity sets are built with
/// it as the admission slack; otherwise they are left empty.
pub fn mine_hard_negatives(
    s: &SimilarityMatrix,
    concept_ids: &[usize],
    relative_margin: Option<f64>,
) -> Result<MinedTripletSet> {
    let n = s.len();
    if concept_ids.len() != n {
        return Err(Error::Shape(format!(
            "{} concept ids for a {n}x{n} similarity matrix",
            concept_ids.len()
        )));
    }
    let mut mined = MinedTripletSet {
        hard_neg_text: Vec::with_capacity(n),
        hard_neg_image: Vec::with_capacity(n),
        image_relatives: Vec::with_capacity(n),
        text_relatives: Vec::with_capacity(n),
    };
    for i in 0..n {
        let neg = hardest_negative(s.row(i), concept_ids, concept_ids[i])
            .ok_or_else(|| Error::Mining(format!("image anchor {i} has no negative candidate")))?;
        mined.hard_neg_text.push(neg);
        mined.image_relatives.push(match relative_margin {
            Some(eps) => relative_sets(s, concept_ids, Anchor::Image(i), i, neg, eps),
            None => RelativeSimilarities::empty(),
        });
    }
    for j in 0..n {
        let column = s.column(j);
        let neg = hardest_negative(&column, concept_ids, concept_ids[j])
            .ok_or_else(|| Error::Mining(format!("text anchor {j} has no negative candidate")))?;
        mined.hard_neg_image.push(neg);
        mined.text_relatives.push(match relative_margin {
            Some(eps) => relative_sets_along(&column, concept_ids, concept_ids[j], j, neg, eps),
            None => RelativeSimilarities::empty(),
        });
    }
    Ok(mined)
}
