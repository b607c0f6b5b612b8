//! The 15-combination sweep: every objective × every seed, aggregated into
//! per-combination mean and standard deviation of final R@1.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::data::{generate_dataset, SplitDataset, SyntheticDatasetSpec};
use super::record::RunRecord;
use crate::error::{Error, Result};
use crate::trainer::{train_from_scratch, TrainConfig};
use crate::weights::{
    combination_label, GradientObjective, Hyperparameters, PairFamily, TripletFamily,
};

/// Run settings shared by every cell; the objective and seed are filled in
/// per run.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTemplate {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub hyperparameters: Hyperparameters,
}

impl GridTemplate {
    pub fn config(&self, objective: GradientObjective, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            embed_dim: self.embed_dim,
            seed,
            objective,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (`n − 1`); the deviation of fewer
/// than two values is 0. `None` for an empty slice.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Some(Summary { mean, std })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub triplet_weight: TripletFamily,
    pub pair_weight: PairFamily,
    pub name: &'static str,
    pub runs: usize,
    pub failures: Vec<String>,
    pub r1_image_to_text: Option<Summary>,
    pub r1_text_to_image: Option<Summary>,
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    /// Triplet family major, then pair family, then seed in input order.
    pub runs: Vec<std::result::Result<RunRecord, String>>,
}

impl GridReport {
    pub fn all_completed(&self) -> bool {
        self.cells.iter().all(|c| c.failures.is_empty())
    }

    pub fn cell(&self, t: TripletFamily, p: PairFamily) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.triplet_weight == t && c.pair_weight == p)
    }

    /// One row per combination.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record([
            "triplet_weight",
            "pair_weight",
            "name",
            "runs",
            "failed",
            "r1_i2t_mean",
            "r1_i2t_std",
            "r1_t2i_mean",
            "r1_t2i_std",
        ])?;
        let fmt = |s: Option<Summary>| match s {
            Some(s) => (format!("{:.6}", s.mean), format!("{:.6}", s.std)),
            None => (String::new(), String::new()),
        };
        for c in &self.cells {
            let (im, is) = fmt(c.r1_image_to_text);
            let (tm, ts) = fmt(c.r1_text_to_image);
            w.write_record([
                c.triplet_weight.as_str(),
                c.pair_weight.as_str(),
                c.name,
                &c.runs.to_string(),
                &c.failures.len().to_string(),
                &im,
                &is,
                &tm,
                &ts,
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Pair weights down, triplet weights across; each cell shows
    /// `mean±std` of R@1 for image→text / text→image.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "| pair \\ triplet |");
        for t in TripletFamily::ALL {
            let _ = write!(out, " T^{t} |");
        }
        out.push('\n');
        out.push_str("|---|---|---|---|\n");
        for p in PairFamily::ALL {
            let _ = write!(out, "| P^{p} |");
            for t in TripletFamily::ALL {
                let cell = self.cell(t, p).expect("grid covers every combination");
                let show = |s: Option<Summary>| match s {
                    Some(s) => format!("{:.3}±{:.3}", s.mean, s.std),
                    None => "failed".to_string(),
                };
                let _ = write!(
                    out,
                    " {} / {} ({}) |",
                    show(cell.r1_image_to_text),
                    show(cell.r1_text_to_image),
                    cell.name
                );
            }
            out.push('\n');
        }
        out
    }
}

fn aggregate(
    objective: &GradientObjective,
    runs: &[std::result::Result<RunRecord, String>],
) -> GridCell {
    let (t, p) = objective.families();
    let mut failures = Vec::new();
    let mut i2t = Vec::new();
    let mut t2i = Vec::new();
    for run in runs {
        match run {
            Ok(r) => match (&r.final_recall, r.completed()) {
                (Some(m), true) => {
                    i2t.push(m.image_to_text.r1);
                    t2i.push(m.text_to_image.r1);
                }
                _ => failures.push(format!("seed {}: {:?}", r.seed, r.status)),
            },
            Err(e) => failures.push(e.clone()),
        }
    }
    GridCell {
        triplet_weight: t,
        pair_weight: p,
        name: combination_label(objective),
        runs: runs.len(),
        failures,
        r1_image_to_text: summarize(&i2t),
        r1_text_to_image: summarize(&t2i),
    }
}

/// Trains all 15 combinations for every seed on one dataset split. Cells
/// run on up to `workers` threads; results are reduced in a fixed order.
pub fn run_grid_on(
    data: &SplitDataset,
    template: &GridTemplate,
    seeds: &[u64],
    workers: usize,
) -> Result<GridReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "grid needs at least one seed".into(),
        ));
    }
    let objectives = GradientObjective::grid(&template.hyperparameters)?;
    let jobs: Vec<(usize, u64)> = (0..objectives.len())
        .flat_map(|o| seeds.iter().map(move |&s| (o, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<std::result::Result<RunRecord, String>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(o, seed)| {
                train_from_scratch(data, &template.config(objectives[o], seed))
                    .map(|(_, record)| record)
                    .map_err(|e| format!("seed {seed}: {e}"))
            })
            .collect()
    });
    let cells = objectives
        .iter()
        .zip(runs.chunks(seeds.len()))
        .map(|(o, chunk)| aggregate(o, chunk))
        .collect();
    Ok(GridReport { cells, runs })
}

pub fn run_grid(
    spec: &SyntheticDatasetSpec,
    template: &GridTemplate,
    seeds: &[u64],
    workers: usize,
) -> Result<GridReport> {
    let data = generate_dataset(spec)?.split();
    run_grid_on(&data, template, seeds, workers)
}
