//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use gradient_objectives::experiment::check::{check_objective, CheckKind, CheckSettings};
use gradient_objectives::experiment::{
    generate_dataset, run_grid_on, ExperimentConfig, SplitDataset,
};
use gradient_objectives::gradient::BatchGradient;
use gradient_objectives::linalg::Matrix;
use gradient_objectives::reference::{fd_gradient, max_relative_error, triplet_loss};
use gradient_objectives::trainer::train_from_scratch;
use gradient_objectives::{
    backward_and_step, batch_gradient, forward, mine_hard_negatives, pair_weight_negative,
    pair_weight_positive, triplet_weight, EmbeddingBatch, GradientObjective, Hyperparameters,
    PairFamily, PairWeightKind, RelativeSimilarities, SimilarityMatrix, TripletFamily,
    TripletWeightKind, TwoTowerModel,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn hp() -> Hyperparameters {
    Hyperparameters::default()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn equivalence() -> Outcome {
    let started = Instant::now();
    let settings = CheckSettings::default();
    let combos = [
        (TripletFamily::Con, PairFamily::Con),
        (TripletFamily::Nca, PairFamily::Con),
        (TripletFamily::Con, PairFamily::Sig),
    ];
    let mut worst = 0.0_f64;
    let mut all = true;
    let mut parts = Vec::new();
    for (seed, (t, p)) in combos.into_iter().enumerate() {
        let obj = GradientObjective::from_families(t, p, &hp()).unwrap();
        let row = check_objective(&obj, &settings, seed as u64).unwrap();
        if let CheckKind::Reference {
            max_relative_error, ..
        } = row.kind
        {
            worst = worst.max(max_relative_error);
            parts.push(format!(
                "{}/{}={max_relative_error:.2e}",
                t.as_str(),
                p.as_str()
            ));
        } else {
            all = false;
        }
        all &= row.passed;
    }
    let elapsed = started.elapsed();
    outcome(
        all && worst <= 1e-5 && elapsed < Duration::from_secs(30),
        format!(
            "{} batches each, N=16, D=8: {} (max {worst:.2e} ≤ 1e-5), {:.2}s < 30s",
            settings.batches,
            parts.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn contour_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let nca = TripletWeightKind::Nca { scale: hp().scale };
    let cir = TripletWeightKind::Cir { scale: hp().scale };
    let mut nca_err = 0.0_f64;
    for _ in 0..10_000 {
        let sp = rng.random_range(-1.0..=1.0);
        let sn = rng.random_range(-1.0..=1.0);
        let shift = rng.random_range(-1.0..=1.0);
        let a = triplet_weight(&nca, sp, sn);
        let b = triplet_weight(&nca, sp + shift, sn + shift);
        nca_err = nca_err.max((a - b).abs());
    }
    let mut cir_err = 0.0_f64;
    for _ in 0..1_000 {
        let r = rng.random_range(0.0..=1.0);
        let (t1, t2): (f64, f64) = (
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
        );
        let a = triplet_weight(&cir, 1.0 + r * t1.cos(), r * t1.sin());
        let b = triplet_weight(&cir, 1.0 + r * t2.cos(), r * t2.sin());
        cir_err = cir_err.max((a - b).abs());
    }
    outcome(
        nca_err <= 1e-12 && cir_err <= 1e-9,
        format!(
            "nca shift invariance max {nca_err:.2e} ≤ 1e-12 (10⁴ pairs), cir circle invariance max {cir_err:.2e} ≤ 1e-9 (10³ pairs)"
        ),
    )
}

fn ms_reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let empty = RelativeSimilarities::empty();
    let mut mismatches = 0usize;
    for _ in 0..10_000 {
        let alpha = rng.random_range(0.1..10.0);
        let beta = rng.random_range(0.1..60.0);
        let lambda = rng.random_range(-1.0..=1.0);
        let sig = PairWeightKind::Sig {
            alpha,
            beta,
            lambda,
        };
        let sig_ms = PairWeightKind::SigMs {
            alpha,
            beta,
            lambda,
            epsilon: 0.1,
        };
        let lin_ms = PairWeightKind::LinMs { epsilon: 0.1 };
        let sp = rng.random_range(-1.0..=1.0);
        let sn = rng.random_range(-1.0..=1.0);
        let pairs = [
            (
                pair_weight_positive(&sig_ms, sp, &empty),
                pair_weight_positive(&sig, sp, &empty),
            ),
            (
                pair_weight_negative(&sig_ms, sn, &empty),
                pair_weight_negative(&sig, sn, &empty),
            ),
            (
                pair_weight_positive(&lin_ms, sp, &empty),
                pair_weight_positive(&PairWeightKind::Lin, sp, &empty),
            ),
            (
                pair_weight_negative(&lin_ms, sn, &empty),
                pair_weight_negative(&PairWeightKind::Lin, sn, &empty),
            ),
        ];
        mismatches += pairs
            .iter()
            .filter(|(a, b)| a.to_bits() != b.to_bits())
            .count();
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} bitwise mismatches over 10⁴ inputs × 4 weights"),
    )
}

fn relative_direction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = hp();
    let sig = PairWeightKind::from_family(PairFamily::Sig, &h);
    let sig_ms = PairWeightKind::from_family(PairFamily::SigMs, &h);
    let mut violations = 0usize;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=6);
        let sn: f64 = rng.random_range(-0.99..=1.0);
        let below = RelativeSimilarities {
            positives: vec![],
            negatives: (0..k).map(|_| rng.random_range(-1.0..sn - 1e-3)).collect(),
        };
        if pair_weight_negative(&sig_ms, sn, &below) <= pair_weight_negative(&sig, sn, &below) {
            violations += 1;
        }
        let sp: f64 = rng.random_range(-1.0..=0.99);
        let above = RelativeSimilarities {
            positives: (0..k).map(|_| rng.random_range(sp + 1e-3..=1.0)).collect(),
            negatives: vec![],
        };
        if pair_weight_positive(&sig_ms, sp, &above) <= pair_weight_positive(&sig, sp, &above) {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations over 10⁴ draws per direction"),
    )
}

/// Lowest-index maximum over candidates of a different concept.
fn scan(values: &[f64], ids: &[usize], own: usize) -> usize {
    let mut best: Option<usize> = None;
    for (k, &v) in values.iter().enumerate() {
        if ids[k] != own && best.is_none_or(|b| v > values[b]) {
            best = Some(k);
        }
    }
    best.unwrap()
}

fn mining_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 16;
    let mut agree = 0usize;
    for trial in 0..1_000 {
        let concepts = rng.random_range(2..=8);
        let mut ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..concepts)).collect();
        ids[0] = 0;
        ids[1] = 1;
        let coarse = trial % 2 == 0;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let v: f64 = rng.random_range(-1.0..=1.0);
                        // coarse grids force ties
                        if coarse {
                            (v * 4.0).round() / 4.0
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        let s = SimilarityMatrix::from_rows(rows.clone()).unwrap();
        let mined = mine_hard_negatives(&s, &ids, None).unwrap();
        let text: Vec<usize> = (0..n).map(|i| scan(&rows[i], &ids, ids[i])).collect();
        let image: Vec<usize> = (0..n)
            .map(|j| {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                scan(&col, &ids, ids[j])
            })
            .collect();
        if mined.hard_neg_text == text && mined.hard_neg_image == image {
            agree += 1;
        }
    }
    outcome(
        agree == 1_000,
        format!("{agree}/1000 random 16×16 matrices match the exhaustive scan"),
    )
}

fn frozen_loss(
    model: &TwoTowerModel,
    images: &[&[f64]],
    texts: &[&[f64]],
    ids: &[usize],
    mined: &gradient_objectives::MinedTripletSet,
    margin: f64,
) -> f64 {
    let pass = forward(model, images, texts, ids.to_vec()).unwrap();
    triplet_loss(&pass.batch, mined, margin).0
}

fn fd_weights(
    model: &TwoTowerModel,
    loss: impl Fn(&TwoTowerModel) -> f64,
    h: f64,
) -> (Matrix, Matrix) {
    let mut probe = model.clone();
    let mut grad_image = Matrix::zeros(model.image_tower.rows(), model.image_tower.cols());
    for k in 0..model.image_tower.as_slice().len() {
        let w = model.image_tower.as_slice()[k];
        probe.image_tower.as_mut_slice()[k] = w + h;
        let up = loss(&probe);
        probe.image_tower.as_mut_slice()[k] = w - h;
        let down = loss(&probe);
        probe.image_tower.as_mut_slice()[k] = w;
        grad_image.as_mut_slice()[k] = (up - down) / (2.0 * h);
    }
    let mut grad_text = Matrix::zeros(model.text_tower.rows(), model.text_tower.cols());
    for k in 0..model.text_tower.as_slice().len() {
        let w = model.text_tower.as_slice()[k];
        probe.text_tower.as_mut_slice()[k] = w + h;
        let up = loss(&probe);
        probe.text_tower.as_mut_slice()[k] = w - h;
        let down = loss(&probe);
        probe.text_tower.as_mut_slice()[k] = w;
        grad_text.as_mut_slice()[k] = (up - down) / (2.0 * h);
    }
    (grad_image, grad_text)
}

fn end_to_end() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = hp();
    let obj = GradientObjective::from_families(TripletFamily::Con, PairFamily::Con, &h).unwrap();
    let (n, embed, di, dt) = (8, 5, 7, 6);
    let lr = 0.5;
    let mut worst = 0.0_f64;
    let mut cases = 0;
    let mut draws = 0;
    while cases < 20 {
        draws += 1;
        let model = TwoTowerModel::init(embed, di, dt, rng.random()).unwrap();
        let images: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut rng, di)).collect();
        let texts: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut rng, dt)).collect();
        let ids: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let ir: Vec<&[f64]> = images.iter().map(Vec::as_slice).collect();
        let tr: Vec<&[f64]> = texts.iter().map(Vec::as_slice).collect();
        let pass = forward(&model, &ir, &tr, ids.clone()).unwrap();
        let s = gradient_objectives::similarity_matrix(&pass.batch);
        let mined = mine_hard_negatives(&s, &ids, None).unwrap();
        let margins = gradient_objectives::reference::triplet_similarities(&pass.batch, &mined);
        let near = margins
            .iter()
            .any(|(sp, sn)| (h.margin + sn - sp).abs() < 1e-3);
        let active = margins.iter().any(|(sp, sn)| h.margin + sn - sp > 0.0);
        if near || !active {
            continue;
        }
        let grad = batch_gradient(&obj, &pass.batch, &mined).unwrap();
        let mut stepped = model.clone();
        backward_and_step(&mut stepped, &ir, &tr, &pass, &grad, lr).unwrap();
        let applied = |before: &Matrix, after: &Matrix| -> Vec<f64> {
            before
                .as_slice()
                .iter()
                .zip(after.as_slice())
                .map(|(b, a)| (b - a) / lr)
                .collect()
        };
        let (fi, ft) = fd_weights(
            &model,
            |m| frozen_loss(m, &ir, &tr, &ids, &mined, h.margin),
            1e-6,
        );
        let candidate = BatchGradient {
            grad_x: vec![applied(&model.image_tower, &stepped.image_tower)],
            grad_y: vec![applied(&model.text_tower, &stepped.text_tower)],
        };
        let reference = BatchGradient {
            grad_x: vec![fi.as_slice().to_vec()],
            grad_y: vec![ft.as_slice().to_vec()],
        };
        worst = worst.max(max_relative_error(&candidate, &reference));
        cases += 1;
    }
    outcome(
        worst <= 1e-4,
        format!("20 cases ({draws} draws), max relative error {worst:.2e} ≤ 1e-4"),
    )
}

fn training(data: &SplitDataset, config: &ExperimentConfig) -> Outcome {
    let started = Instant::now();
    let template = config.grid_template();
    let seeds = [0, 1, 2];
    let report = run_grid_on(data, &template, &seeds, 1).unwrap();
    let total = started.elapsed();
    let mut worst_r1 = f64::INFINITY;
    let mut slowest = Duration::ZERO;
    let mut failures = Vec::new();
    for run in &report.runs {
        match run {
            Ok(r) => {
                slowest = slowest.max(r.wall_clock);
                match &r.final_recall {
                    Some(m) => {
                        let low = m.image_to_text.r1.min(m.text_to_image.r1);
                        worst_r1 = worst_r1.min(low);
                        if low < 0.95 {
                            failures.push(format!(
                                "{}/{} seed {}: {low:.3}",
                                r.triplet_weight.as_str(),
                                r.pair_weight.as_str(),
                                r.seed
                            ));
                        }
                    }
                    None => failures.push(format!(
                        "{}/{} seed {} diverged",
                        r.triplet_weight.as_str(),
                        r.pair_weight.as_str(),
                        r.seed
                    )),
                }
            }
            Err(e) => failures.push(e.clone()),
        }
    }
    let passed = report.runs.len() == 45
        && failures.is_empty()
        && template.epochs <= 200
        && slowest < Duration::from_secs(60)
        && total < Duration::from_secs(15 * 60);
    let mut detail = format!(
        "{} runs × {} epochs, min held-out R@1 {worst_r1:.3} ≥ 0.95, slowest run {:.2}s < 60s, grid {:.1}s < 900s (single-threaded)",
        report.runs.len(),
        template.epochs,
        slowest.as_secs_f64(),
        total.as_secs_f64()
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; below threshold: {}", failures.join(", ")));
    }
    outcome(passed, detail)
}

fn determinism(data: &SplitDataset, config: &ExperimentConfig) -> Outcome {
    let train = config.train_config().unwrap();
    let (_, a) = train_from_scratch(data, &train).unwrap();
    let (_, b) = train_from_scratch(data, &train).unwrap();
    let json_same = a.to_json().unwrap() == b.to_json().unwrap();

    let template = config.grid_template();
    let seeds = [0, 1];
    let first = run_grid_on(data, &template, &seeds, 1).unwrap();
    let second = run_grid_on(data, &template, &seeds, 4).unwrap();
    let csv_same = first.to_csv().unwrap() == second.to_csv().unwrap();
    let runs_same = first.runs.len() == second.runs.len()
        && first
            .runs
            .iter()
            .zip(&second.runs)
            .all(|(x, y)| match (x, y) {
                (Ok(x), Ok(y)) => x.to_json().unwrap() == y.to_json().unwrap(),
                _ => false,
            });
    outcome(
        json_same && csv_same && runs_same,
        format!(
            "run JSON identical: {json_same}; grid CSV identical (1 vs 4 workers): {csv_same}; all {} grid run JSONs identical: {runs_same}",
            first.runs.len()
        ),
    )
}

fn fd_order() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch = EmbeddingBatch::from_raw(
        &(0..6).map(|_| gaussian(&mut rng, 4)).collect::<Vec<_>>(),
        &(0..6).map(|_| gaussian(&mut rng, 4)).collect::<Vec<_>>(),
        (0..6).map(|i| i % 3).collect(),
    )
    .unwrap();
    let entries = |b: &EmbeddingBatch| {
        b.x.iter()
            .chain(&b.y)
            .flatten()
            .copied()
            .collect::<Vec<f64>>()
    };

    // Σ e²: central differences are exact up to rounding.
    let quad = fd_gradient(|b| entries(b).iter().map(|e| e * e).sum(), &batch, 1e-3).unwrap();
    let quad_err = quad
        .flatten()
        .iter()
        .zip(entries(&batch))
        .fold(0.0_f64, |m, (g, e)| m.max((g - 2.0 * e).abs()));

    // Σ sin e has a non-zero third derivative, so the truncation error shows.
    let error = |h: f64| {
        let g = fd_gradient(|b| entries(b).iter().map(|e| e.sin()).sum(), &batch, h).unwrap();
        g.flatten()
            .iter()
            .zip(entries(&batch))
            .fold(0.0_f64, |m, (g, e)| m.max((g - e.cos()).abs()))
    };
    let (coarse, fine) = (error(1e-3), error(5e-4));
    let ratio = coarse / fine;
    outcome(
        (3.5..=4.5).contains(&ratio) && quad_err < 1e-9,
        format!(
            "error ratio h=1e-3 → 5e-4 on Σ sin e: {ratio:.4} ∈ [3.5, 4.5]; Σ e² exact to {quad_err:.1e}"
        ),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() -> ExitCode {
    let config = ExperimentConfig::default();
    let data = generate_dataset(&config.dataset).unwrap().split();
    let criteria: Vec<Criterion> = vec![
        ("gradient–loss equivalence", Box::new(equivalence)),
        ("contour geometry", Box::new(contour_geometry)),
        ("MS reductions", Box::new(ms_reductions)),
        ("relative-term direction", Box::new(relative_direction)),
        ("mining oracle", Box::new(mining_oracle)),
        ("end-to-end weight gradient", Box::new(end_to_end)),
        ("desk-scale training", Box::new(|| training(&data, &config))),
        ("determinism", Box::new(|| determinism(&data, &config))),
        ("finite-difference order", Box::new(fd_order)),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.passed {
            failed += 1;
        }
        println!(
            "criterion {} [PRIMARY] {name}: {} ({})",
            k + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
