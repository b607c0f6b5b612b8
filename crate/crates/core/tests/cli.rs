use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[dataset]
concepts = 6
samples_per_concept = 10
image_dim = 12
text_dim = 10

[train]
epochs = 20
batch_size = 12
embed_dim = 6

[grid]
seeds = [0, 1]
workers = 2
"#;

fn gradobj(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("small.toml");
    if !config.exists() {
        fs::write(&config, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_gradobj"))
        .arg("--config")
        .arg(&config)
        .arg("--out-dir")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn train_writes_a_reproducible_record() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = gradobj(dir.path(), args);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        fs::read(dir.path().join("out/runs/cir_lin_seed4.json")).unwrap()
    };
    let args = ["--seed", "4", "train", "--triplet", "cir", "--pair", "lin"];
    let first = run(&args);
    let second = run(&args);
    assert_eq!(first, second);
    let record: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(record["objective_name"], "circle loss");
    assert_eq!(record["status"]["status"], "completed");
    assert_eq!(record["epochs"].as_array().unwrap().len(), 20);
}

#[test]
fn grid_writes_summary_and_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = gradobj(dir.path(), &["grid", "--epochs", "3"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("| pair \\ triplet |"));
    let csv = fs::read_to_string(dir.path().join("out/grid.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 16);
    assert!(lines[0].starts_with("triplet_weight,pair_weight,name,runs,failed"));
    assert!(lines
        .iter()
        .any(|l| l.starts_with("con,sig-ms,MS loss,2,0,")));
    assert_eq!(
        fs::read_dir(dir.path().join("out/runs")).unwrap().count(),
        30
    );
    let timings = fs::read_to_string(dir.path().join("out/timings.csv")).unwrap();
    assert_eq!(timings.lines().count(), 31);
}

#[test]
fn diagram_samples_the_unit_square() {
    let dir = tempfile::tempdir().unwrap();
    let out = gradobj(
        dir.path(),
        &["diagram", "--weight", "t-cir", "--resolution", "11"],
    );
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("out/diagram_t-cir.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "s_pos,s_neg,weight");
    assert_eq!(lines.len(), 1 + 11 * 11);

    let out = gradobj(
        dir.path(),
        &[
            "diagram",
            "--weight",
            "p-sig-ms",
            "--resolution",
            "5",
            "--relative-negatives",
            "0.1,-0.2",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("out/diagram_p-sig-ms.csv")).unwrap();
    assert!(csv.starts_with("s_pos,s_neg,positive_weight,negative_weight\n"));
    assert_eq!(csv.lines().count(), 26);
}

#[test]
fn check_grad_reports_every_combination() {
    let dir = tempfile::tempdir().unwrap();
    let out = gradobj(dir.path(), &["check-grad", "--batches", "5"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("out/check_grad.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 16);
    assert_eq!(lines.iter().filter(|l| l.ends_with(",true")).count(), 15);
    assert_eq!(
        lines.iter().filter(|l| l.contains(",structural,")).count(),
        12
    );
}

#[test]
fn diverged_run_exits_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = gradobj(
        dir.path(),
        &["train", "--learning-rate", "1e300", "--epochs", "3"],
    );
    assert_eq!(out.status.code(), Some(1));
    let record: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/runs/con_con_seed0.json")).unwrap())
            .unwrap();
    assert_eq!(record["status"]["status"], "diverged");
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[train]\nlearning_rat = 0.1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gradobj"))
        .arg("--config")
        .arg(&config)
        .args(["train"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}
