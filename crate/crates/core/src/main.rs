use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gradient_objectives::experiment::check::check_csv;
use gradient_objectives::experiment::diagram::diagram_csv;
use gradient_objectives::experiment::{
    check_all, emit_weight_diagram, generate_dataset, run_grid_on, DiagramKind, ExperimentConfig,
    RunRecord,
};
use gradient_objectives::trainer::train_from_scratch;
use gradient_objectives::{
    combination_label, PairFamily, PairWeightKind, RelativeSimilarities, Result, TripletFamily,
    TripletWeightKind,
};

#[derive(Parser, Debug)]
#[command(
    name = "gradobj",
    version,
    about = "Gradient-space objectives for two-tower retrieval"
)]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Run seed (grid: replaces the seed list with this single seed)
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every triplet/pair combination for every seed
    Grid {
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Train a single objective
    Train {
        #[arg(long)]
        triplet: Option<TripletFamily>,
        #[arg(long)]
        pair: Option<PairFamily>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Sample a weight function on a grid over [0, 1]²
    Diagram {
        #[arg(long, value_enum)]
        weight: DiagramWeight,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        /// Relative positive similarities for the MS pair weights
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        relative_positives: Vec<f64>,
        /// Relative negative similarities for the MS pair weights
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        relative_negatives: Vec<f64>,
    },
    /// Compare assembled gradients with finite differences of reference losses
    CheckGrad {
        #[arg(long)]
        batches: Option<usize>,
    },
}

#[derive(clap::Args, Debug)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(e) = self.epochs {
            config.train.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            config.train.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            config.train.batch_size = b;
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DiagramWeight {
    TCon,
    TNca,
    TCir,
    PCon,
    PLin,
    PSig,
    PSigMs,
    PLinMs,
}

impl DiagramWeight {
    fn name(self) -> &'static str {
        match self {
            DiagramWeight::TCon => "t-con",
            DiagramWeight::TNca => "t-nca",
            DiagramWeight::TCir => "t-cir",
            DiagramWeight::PCon => "p-con",
            DiagramWeight::PLin => "p-lin",
            DiagramWeight::PSig => "p-sig",
            DiagramWeight::PSigMs => "p-sig-ms",
            DiagramWeight::PLinMs => "p-lin-ms",
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn write_run(dir: &Path, record: &RunRecord) -> Result<()> {
    write_file(&dir.join("runs"), &record.file_name(), &record.to_json()?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Grid {
            seeds,
            workers,
            overrides,
        } => {
            overrides.apply(&mut config);
            if let Some(s) = seeds {
                config.grid.seeds = s;
            }
            if let Some(s) = cli.seed {
                config.grid.seeds = vec![s];
            }
            if let Some(w) = workers {
                config.grid.workers = w;
            }
            let data = generate_dataset(&config.dataset)?.split();
            let report = run_grid_on(
                &data,
                &config.grid_template(),
                &config.grid.seeds,
                config.grid.worker_count(),
            )?;
            let mut timings = String::from("triplet_weight,pair_weight,seed,seconds\n");
            for run in &report.runs {
                match run {
                    Ok(r) => {
                        write_run(&cli.out_dir, r)?;
                        timings.push_str(&format!(
                            "{},{},{},{:.3}\n",
                            r.triplet_weight,
                            r.pair_weight,
                            r.seed,
                            r.wall_clock.as_secs_f64()
                        ));
                    }
                    Err(e) => eprintln!("run failed: {e}"),
                }
            }
            let csv = write_file(&cli.out_dir, "grid.csv", &report.to_csv()?)?;
            write_file(&cli.out_dir, "timings.csv", &timings)?;
            println!("{}", report.to_table());
            println!("wrote {}", csv.display());
            for cell in report.cells.iter().filter(|c| !c.failures.is_empty()) {
                for f in &cell.failures {
                    eprintln!("T^{}/P^{}: {f}", cell.triplet_weight, cell.pair_weight);
                }
            }
            Ok(report.all_completed())
        }
        Command::Train {
            triplet,
            pair,
            overrides,
        } => {
            overrides.apply(&mut config);
            if let Some(t) = triplet {
                config.objective.triplet = t;
            }
            if let Some(p) = pair {
                config.objective.pair = p;
            }
            if let Some(s) = cli.seed {
                config.train.seed = s;
            }
            let train_config = config.train_config()?;
            let data = generate_dataset(&config.dataset)?.split();
            let (_, record) = train_from_scratch(&data, &train_config)?;
            write_run(&cli.out_dir, &record)?;
            println!(
                "{} ({}) seed {}: {:?}",
                train_config.objective,
                combination_label(&train_config.objective),
                record.seed,
                record.status
            );
            if let Some(m) = &record.final_recall {
                println!(
                    "image→text R@1 {:.4} R@5 {:.4} R@10 {:.4}",
                    m.image_to_text.r1, m.image_to_text.r5, m.image_to_text.r10
                );
                println!(
                    "text→image R@1 {:.4} R@5 {:.4} R@10 {:.4}",
                    m.text_to_image.r1, m.text_to_image.r5, m.text_to_image.r10
                );
            }
            println!("{:.2}s", record.wall_clock.as_secs_f64());
            Ok(record.completed())
        }
        Command::Diagram {
            weight,
            resolution,
            relative_positives,
            relative_negatives,
        } => {
            let hp = config.hyperparameters;
            let rel = RelativeSimilarities {
                positives: relative_positives,
                negatives: relative_negatives,
            };
            let pair = |f| DiagramKind::Pair(PairWeightKind::from_family(f, &hp), rel.clone());
            let kind = match weight {
                DiagramWeight::TCon => {
                    DiagramKind::Triplet(TripletWeightKind::from_family(TripletFamily::Con, &hp))
                }
                DiagramWeight::TNca => {
                    DiagramKind::Triplet(TripletWeightKind::from_family(TripletFamily::Nca, &hp))
                }
                DiagramWeight::TCir => {
                    DiagramKind::Triplet(TripletWeightKind::from_family(TripletFamily::Cir, &hp))
                }
                DiagramWeight::PCon => pair(PairFamily::Con),
                DiagramWeight::PLin => pair(PairFamily::Lin),
                DiagramWeight::PSig => pair(PairFamily::Sig),
                DiagramWeight::PSigMs => pair(PairFamily::SigMs),
                DiagramWeight::PLinMs => pair(PairFamily::LinMs),
            };
            let rows = emit_weight_diagram(&kind, resolution)?;
            let path = write_file(
                &cli.out_dir,
                &format!("diagram_{}.csv", weight.name()),
                &diagram_csv(&kind, &rows)?,
            )?;
            println!("wrote {} ({} rows)", path.display(), rows.len());
            Ok(true)
        }
        Command::CheckGrad { batches } => {
            if let Some(b) = batches {
                config.check.batches = b;
            }
            let seed = cli.seed.unwrap_or(0);
            let rows = check_all(&config.hyperparameters, &config.check, seed)?;
            let csv = check_csv(&rows)?;
            let path = write_file(&cli.out_dir, "check_grad.csv", &csv)?;
            print!("{csv}");
            println!("wrote {}", path.display());
            Ok(rows.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
