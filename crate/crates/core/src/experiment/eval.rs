//! Recall@K over a similarity matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mining::SimilarityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ImageToText,
    TextToImage,
}

/// Fraction of queries with a same-concept item among their top `k`
/// candidates. Image queries rank row `i`, text queries rank column `j`;
/// equal similarities rank the lower index first.
pub fn recall_at_k(
    s: &SimilarityMatrix,
    concept_ids: &[usize],
    k: usize,
    direction: Direction,
) -> Result<f64> {
    let n = s.len();
    if concept_ids.len() != n {
        return Err(Error::Shape(format!(
            "{} ids for {n} queries",
            concept_ids.len()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::Eval(format!("k = {k} outside 1..={n}")));
    }
    let mut hits = 0usize;
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for q in 0..n {
        let scores: Vec<f64> = match direction {
            Direction::ImageToText => s.row(q).to_vec(),
            Direction::TextToImage => s.column(q),
        };
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        if order[..k].iter().any(|&c| concept_ids[c] == concept_ids[q]) {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallAtK {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub image_to_text: RecallAtK,
    pub text_to_image: RecallAtK,
}

fn recall_triplet(s: &SimilarityMatrix, ids: &[usize], direction: Direction) -> Result<RecallAtK> {
    let n = s.len();
    Ok(RecallAtK {
        r1: recall_at_k(s, ids, 1, direction)?,
        r5: recall_at_k(s, ids, 5.min(n), direction)?,
        r10: recall_at_k(s, ids, 10.min(n), direction)?,
    })
}

/// R@{1,5,10} in both directions; `k` is capped at the pool size.
pub fn retrieval_metrics(s: &SimilarityMatrix, ids: &[usize]) -> Result<RetrievalMetrics> {
    Ok(RetrievalMetrics {
        image_to_text: recall_triplet(s, ids, Direction::ImageToText)?,
        text_to_image: recall_triplet(s, ids, Direction::TextToImage)?,
    })
}
