//! Weight diagrams: weights sampled on a uniform grid over
//! `(s_pos, s_neg) ∈ [0, 1]²`, emitted as CSV for external plotting.

use crate::error::{Error, Result};
use crate::weights::{
    pair_weight_negative, pair_weight_positive, triplet_weight, PairWeightKind,
    RelativeSimilarities, TripletWeightKind,
};

#[derive(Debug, Clone, PartialEq)]
pub enum DiagramKind {
    Triplet(TripletWeightKind),
    /// Pair weights with fixed relative similarities (empty for the plain
    /// sigmoid/linear shapes).
    Pair(PairWeightKind, RelativeSimilarities),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagramRow {
    pub s_pos: f64,
    pub s_neg: f64,
    /// Triplet weight, or `P₊(s_pos)` for pair diagrams.
    pub weight: f64,
    /// `P₋(s_neg)` for pair diagrams.
    pub negative_weight: Option<f64>,
}

/// Row-major over `s_pos`, then `s_neg`, each `i / (resolution − 1)`.
pub fn emit_weight_diagram(kind: &DiagramKind, resolution: usize) -> Result<Vec<DiagramRow>> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "diagram resolution must be at least 2, got {resolution}"
        )));
    }
    let step = |i: usize| i as f64 / (resolution - 1) as f64;
    let mut rows = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let (s_pos, s_neg) = (step(i), step(j));
            let row = match kind {
                DiagramKind::Triplet(t) => DiagramRow {
                    s_pos,
                    s_neg,
                    weight: triplet_weight(t, s_pos, s_neg),
                    negative_weight: None,
                },
                DiagramKind::Pair(p, rel) => DiagramRow {
                    s_pos,
                    s_neg,
                    weight: pair_weight_positive(p, s_pos, rel),
                    negative_weight: Some(pair_weight_negative(p, s_neg, rel)),
                },
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn diagram_csv(kind: &DiagramKind, rows: &[DiagramRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    match kind {
        DiagramKind::Triplet(_) => w.write_record(["s_pos", "s_neg", "weight"])?,
        DiagramKind::Pair(..) => {
            w.write_record(["s_pos", "s_neg", "positive_weight", "negative_weight"])?
        }
    }
    for r in rows {
        let mut rec = vec![
            format!("{:.6}", r.s_pos),
            format!("{:.6}", r.s_neg),
            format!("{:.12e}", r.weight),
        ];
        if let Some(n) = r.negative_weight {
            rec.push(format!("{n:.12e}"));
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
