//! Integration tests that drive the compiled binary end to end: subcommand
//! pipelines, output artifacts, and the exit-code contract
//! (0 = success, 1 = any error, 2 = grid finished with failed runs).

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mlnoise::data::read_labels_csv;
use mlnoise::noise::class_present_counts;

fn mlnoise(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlnoise"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary must spawn")
}

fn assert_exit(output: &Output, want: i32, context: &str) {
    let code = output.status.code().expect("no signal expected");
    assert_eq!(
        code,
        want,
        "{context}: expected exit {want}, got {code}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let config = serde_json::json!({
        "dataset": {
            "kind": "synthetic",
            "n_examples": 240,
            "n_features": 10,
            "n_classes": 4,
            "mean_labels_per_example": 1.3,
            "seed": 3
        },
        "methods": ["bce", "sat"],
        "noise_types": ["additive", "mixed"],
        "noise_rates": [0.0, 0.3],
        "seeds": [1, 2],
        "train": {"epochs": 3, "batch_size": 32, "lr_drop_epoch": 3},
        "n_hidden": 8,
        "output_dir": dir.join("grid_out")
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn gen_is_deterministic_and_respects_shape_flags() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let out = mlnoise(
            &[
                "gen",
                "--out",
                sub,
                "--seed",
                "9",
                "--n-examples",
                "50",
                "--n-features",
                "6",
                "--n-classes",
                "3",
                "--mean-labels",
                "1.2",
            ],
            dir.path(),
        );
        assert_exit(&out, 0, "gen");
    }
    let features_a = fs::read(dir.path().join("a/features.csv")).unwrap();
    let features_b = fs::read(dir.path().join("b/features.csv")).unwrap();
    let labels_a = fs::read(dir.path().join("a/labels.csv")).unwrap();
    let labels_b = fs::read(dir.path().join("b/labels.csv")).unwrap();
    assert_eq!(features_a, features_b, "same seed must give identical features");
    assert_eq!(labels_a, labels_b, "same seed must give identical labels");

    let labels = read_labels_csv(&dir.path().join("a/labels.csv")).unwrap();
    assert_eq!(labels.n_examples(), 50);
    assert_eq!(labels.n_classes(), 3);
}

#[test]
fn inject_pipeline_accounts_for_every_flip() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlnoise(
        &[
            "gen", "--out", "data", "--seed", "4", "--n-examples", "80", "--n-features", "5",
            "--n-classes", "4", "--mean-labels", "1.5",
        ],
        dir.path(),
    );
    assert_exit(&out, 0, "gen");

    let out = mlnoise(
        &[
            "inject",
            "--labels",
            "data/labels.csv",
            "--noise-type",
            "subtractive",
            "--rate",
            "0.3",
            "--seed",
            "12",
            "--out",
            "noisy",
        ],
        dir.path(),
    );
    assert_exit(&out, 0, "inject");

    let original = read_labels_csv(&dir.path().join("data/labels.csv")).unwrap();
    let noisy = read_labels_csv(&dir.path().join("noisy/noisy_labels.csv")).unwrap();
    let present = class_present_counts(&original);

    let report = fs::read_to_string(dir.path().join("noisy/noise_report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next(),
        Some("class_index,planned,performed_add,performed_sub,clamped"),
        "report header"
    );
    for (class, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 5, "report row {class}");
        assert_eq!(cells[0].parse::<usize>().unwrap(), class);
        let planned: usize = cells[1].parse().unwrap();
        let performed_add: usize = cells[2].parse().unwrap();
        let performed_sub: usize = cells[3].parse().unwrap();
        assert_eq!(planned, (0.3 * present[class] as f64).round() as usize);
        assert_eq!(performed_add, 0, "subtractive noise never adds labels");
        assert_eq!(performed_sub, planned);
        assert_eq!(cells[4], "0", "subtractive noise cannot hit the additive cap");

        // Recount directly from the two matrices.
        let mut removed = 0usize;
        for row in 0..original.n_examples() {
            let before = original.array()[(row, class)];
            let after = noisy.array()[(row, class)];
            assert!(after <= before, "subtractive noise only turns 1 into 0");
            removed += usize::from(before == 1 && after == 0);
        }
        assert_eq!(removed, performed_sub);
    }
}

#[test]
fn eval_on_perfect_scores_reports_ones() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlnoise(
        &[
            "gen", "--out", "data", "--seed", "6", "--n-examples", "40", "--n-features", "4",
            "--n-classes", "3", "--mean-labels", "1.4",
        ],
        dir.path(),
    );
    assert_exit(&out, 0, "gen");

    // The labels file itself is a valid score matrix (0.0 / 1.0 entries)
    // that ranks every relevant entry first.
    let out = mlnoise(
        &[
            "eval",
            "--scores",
            "data/labels.csv",
            "--labels",
            "data/labels.csv",
            "--out",
            "metrics.csv",
        ],
        dir.path(),
    );
    assert_exit(&out, 0, "eval");

    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next(),
        Some("map_micro,map_macro,f1_micro,f1_macro,excluded_classes")
    );
    let row: Vec<&str> = lines.next().expect("one data row").split(',').collect();
    for (column, cell) in row.iter().take(4).enumerate() {
        let value: f64 = cell.parse().unwrap();
        assert_eq!(value, 1.0, "column {column} should be a perfect score");
    }
}

#[test]
fn train_writes_metrics_epoch_log_and_noise_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = mlnoise(
        &[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--method",
            "sat",
            "--noise-type",
            "mixed",
            "--rate",
            "0.3",
            "--seed",
            "1",
            "--out",
            "run_out",
        ],
        dir.path(),
    );
    assert_exit(&out, 0, "train");

    let metrics = fs::read_to_string(dir.path().join("run_out/metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next(),
        Some(
            "method,noise_type,noise_rate,seed,best_map_micro,best_map_macro,\
             f1_micro_at_best,f1_macro_at_best,best_epoch,final_train_loss"
        )
    );
    let row: Vec<&str> = lines.next().expect("one run row").split(',').collect();
    assert_eq!(&row[..4], &["sat", "mixed", "0.3", "1"]);
    let best_map_micro: f64 = row[4].parse().unwrap();
    assert!((0.0..=1.0).contains(&best_map_micro));

    let epochs = fs::read_to_string(dir.path().join("run_out/epochs.csv")).unwrap();
    // Header plus one line per epoch.
    assert_eq!(epochs.lines().count(), 1 + 3);
    assert!(dir.path().join("run_out/noise_report.csv").exists());
}

#[test]
fn grid_runs_the_full_cell_expansion_and_resumes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = mlnoise(&["grid", "--config", config.to_str().unwrap()], dir.path());
    assert_exit(&out, 0, "grid");

    let results_path = dir.path().join("grid_out/results.csv");
    let results = fs::read_to_string(&results_path).unwrap();
    // 2 methods x 2 noise types x 2 rates x 2 seeds, rate 0 included: the
    // clean run is trained once per (method, seed) but still reported once
    // per noise type, so the table has the full 16 rows plus the header.
    assert_eq!(results.lines().count(), 1 + 16);
    for name in ["aggregate.csv", "fig5.csv", "fig6.csv", "fig7.csv"] {
        assert!(dir.path().join("grid_out").join(name).exists(), "{name}");
    }

    let before = fs::read(&results_path).unwrap();
    let out = mlnoise(&["grid", "--config", config.to_str().unwrap()], dir.path());
    assert_exit(&out, 0, "grid resume");
    assert_eq!(
        fs::read(&results_path).unwrap(),
        before,
        "resuming a finished grid must reproduce results.csv byte for byte"
    );
}

#[test]
fn grid_with_a_single_seed_override_uses_that_seed_only() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = mlnoise(
        &[
            "grid",
            "--config",
            config.to_str().unwrap(),
            "--out",
            "solo",
            "--seed",
            "7",
        ],
        dir.path(),
    );
    assert_exit(&out, 0, "grid --seed");
    let results = fs::read_to_string(dir.path().join("solo/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 8, "half the rows of the two-seed grid");
    for line in results.lines().skip(1) {
        assert_eq!(line.split(',').nth(3), Some("7"), "seed column");
    }
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.json");
    let config = serde_json::json!({
        "dataset": {"kind": "synthetic", "n_examples": 100},
        "methods": [],
        "output_dir": dir.path().join("out")
    });
    fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = mlnoise(&["grid", "--config", config_path.to_str().unwrap()], dir.path());
    assert_exit(&out, 1, "empty method list");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error"), "stderr should explain: {stderr}");
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_exit(&mlnoise(&["--no-such-flag"], dir.path()), 1, "unknown flag");
    assert_exit(
        &mlnoise(&["inject", "--labels", "x.csv"], dir.path()),
        1,
        "missing required arguments",
    );
    assert_exit(&mlnoise(&["--help"], dir.path()), 0, "--help");
    assert_exit(&mlnoise(&["grid", "--help"], dir.path()), 0, "grid --help");
}

#[test]
fn grid_with_diverging_runs_exits_two_and_records_failures() {
    let dir = tempfile::tempdir().unwrap();
    // A learning rate this large flips the sign of every weight through the
    // decay term and overflows the parameters to infinity within a few dozen
    // steps; the forward pass then produces NaN scores and the run is
    // recorded as failed while the grid itself completes.
    let config = serde_json::json!({
        "dataset": {
            "kind": "synthetic",
            "n_examples": 200,
            "n_features": 8,
            "n_classes": 4,
            "seed": 3
        },
        "methods": ["bce"],
        "noise_types": ["additive"],
        "noise_rates": [0.0],
        "seeds": [1],
        "train": {
            "epochs": 10,
            "batch_size": 32,
            "learning_rate": 1e15,
            "lr_drop_epoch": 9
        },
        "n_hidden": 8,
        "output_dir": dir.path().join("out")
    });
    let config_path = dir.path().join("diverge.json");
    fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();

    let out = mlnoise(&["grid", "--config", config_path.to_str().unwrap()], dir.path());
    assert_exit(&out, 2, "grid with failed runs");

    let failures = fs::read_to_string(dir.path().join("out/failures.csv")).unwrap();
    assert_eq!(
        failures.lines().next(),
        Some("method,noise_type,noise_rate,seed,message")
    );
    assert_eq!(failures.lines().count(), 2, "one failure row");
    assert!(failures.contains("bce,additive,0,1,"));
}

#[test]
fn check_subcommand_passes_its_self_tests() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlnoise(&["check"], dir.path());
    assert_exit(&out, 0, "check");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let passes = stdout.matches("PASS").count();
    assert!(passes >= 7, "expected at least 7 PASS lines, got {passes}:\n{stdout}");
    assert!(!stdout.contains("FAIL"), "no FAIL lines expected:\n{stdout}");
}
