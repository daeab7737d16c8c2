//! Command-line interface: dataset generation, noise injection, single
//! training runs, score evaluation, full experiment grids, and a built-in
//! numeric self-test.
//!
//! Exit codes: 0 on success, 1 on validation or I/O errors, 2 when a grid
//! finished but some runs failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mlnoise::data::{
    make_synthetic_dataset, read_labels_csv, write_features_csv, write_labels_csv, ScoreMatrix,
    SyntheticSpec,
};
use mlnoise::harness::{
    prepare_dataset, run_grid, run_seeds, run_single, write_atomic, write_epoch_log_csv,
    DatasetConfig, ExperimentConfig,
};
use mlnoise::metrics::{write_metrics_csv, MetricsReport};
use mlnoise::nn::TrainConfig;
use mlnoise::noise::{inject_noise, write_noise_report_csv, NoiseSpec, NoiseType};
use mlnoise::objectives::TrainMethod;
use mlnoise::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mlnoise",
    version,
    about = "Class-wise multi-label label-noise experiments: injection, robust training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-label dataset as features/labels CSVs.
    Gen(GenArgs),
    /// Inject class-wise label noise into a labels CSV.
    Inject(InjectArgs),
    /// Train one method on one noise cell and write metrics + epoch log.
    Train(TrainArgs),
    /// Evaluate a scores CSV against a labels CSV.
    Eval(EvalArgs),
    /// Run the full experiment grid and write results/aggregate/plot CSVs.
    Grid(GridArgs),
    /// Run the numeric self-test suite (gradients, oracles, noise counts).
    Check,
}

fn parse_noise_type(s: &str) -> std::result::Result<NoiseType, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<TrainMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct GenArgs {
    /// JSON experiment config; its synthetic dataset block seeds the
    /// generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for features.csv and labels.csv.
    #[arg(long, default_value = "data")]
    out: PathBuf,
    /// Generator seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_examples: Option<usize>,
    #[arg(long)]
    n_features: Option<usize>,
    #[arg(long)]
    n_classes: Option<usize>,
    /// Target mean number of present labels per example.
    #[arg(long)]
    mean_labels: Option<f64>,
}

#[derive(Args)]
struct InjectArgs {
    /// Labels CSV to corrupt (headerless, cells exactly 0 or 1).
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_parser = parse_noise_type)]
    noise_type: NoiseType,
    /// Fraction of each class's present count to flip, in [0, 1].
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for noisy_labels.csv and noise_report.csv.
    #[arg(long, default_value = "noisy")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON experiment config (defaults used when absent).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training method (default: first configured method).
    #[arg(long, value_parser = parse_method)]
    method: Option<TrainMethod>,
    /// Noise type (default: first configured type).
    #[arg(long, value_parser = parse_noise_type)]
    noise_type: Option<NoiseType>,
    /// Noise rate (default: first configured rate).
    #[arg(long)]
    rate: Option<f64>,
    /// Master seed (default: first configured seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics.csv and epochs.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Scores CSV (headerless reals in [0, 1]).
    #[arg(long)]
    scores: PathBuf,
    /// Labels CSV (headerless, cells exactly 0 or 1).
    #[arg(long)]
    labels: PathBuf,
    /// Output metrics CSV file.
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
    /// Binarization threshold for the F1 scores.
    #[arg(long, default_value_t = mlnoise::metrics::DEFAULT_F1_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct GridArgs {
    /// JSON experiment config (defaults used when absent).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    // Exit codes: 0 = success, 1 = any error, 2 = the grid finished but some
    // runs failed. Usage errors therefore map to 1, not clap's default 2;
    // --help and --version still exit 0.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = ExitCode::from(u8::from(e.use_stderr()));
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Inject(args) => cmd_inject(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Check => cmd_check(),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_json_file(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn cmd_gen(args: GenArgs) -> Result<ExitCode> {
    let config = load_config(args.config.as_ref())?;
    let mut spec = match config.dataset {
        DatasetConfig::Synthetic(spec) => spec,
        DatasetConfig::Csv { .. } => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.n_examples {
        spec.n_examples = n;
    }
    if let Some(d) = args.n_features {
        spec.n_features = d;
    }
    if let Some(c) = args.n_classes {
        spec.n_classes = c;
    }
    if let Some(m) = args.mean_labels {
        spec.mean_labels_per_example = m;
    }
    let (features, labels) = make_synthetic_dataset(&spec)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::IoAt {
        path: args.out.clone(),
        source: e,
    })?;
    let features_path = args.out.join("features.csv");
    let labels_path = args.out.join("labels.csv");
    write_features_csv(&features_path, &features)?;
    write_labels_csv(&labels_path, &labels)?;

    let present: usize = labels.array().iter().map(|&v| v as usize).sum();
    println!(
        "generated {} examples x {} features, {} classes ({:.3} labels/example) -> {}, {}",
        features.n_examples(),
        features.n_features(),
        labels.n_classes(),
        present as f64 / labels.n_examples() as f64,
        features_path.display(),
        labels_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_inject(args: InjectArgs) -> Result<ExitCode> {
    let labels = read_labels_csv(&args.labels)?;
    let spec = NoiseSpec {
        noise_type: args.noise_type,
        rate: args.rate,
        seed: args.seed,
    };
    let (noisy, report) = inject_noise(&labels, &spec)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::IoAt {
        path: args.out.clone(),
        source: e,
    })?;
    let noisy_path = args.out.join("noisy_labels.csv");
    let report_path = args.out.join("noise_report.csv");
    write_labels_csv(&noisy_path, &noisy)?;
    write_noise_report_csv(&report_path, &report)?;

    println!(
        "injected {} noise at rate {}: {} flips ({} added, {} removed), {} classes clamped -> {}, {}",
        args.noise_type,
        args.rate,
        report.total_flips(),
        report.performed_add.iter().sum::<usize>(),
        report.performed_sub.iter().sum::<usize>(),
        report.clamped_classes.len(),
        noisy_path.display(),
        report_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let config = load_config(args.config.as_ref())?;
    let method = args.method.unwrap_or(config.methods[0]);
    let noise_type = args.noise_type.unwrap_or(config.noise_types[0]);
    let rate = args.rate.unwrap_or(config.noise_rates[0]);
    let master_seed = args.seed.unwrap_or(config.seeds[0]);
    let out = args.out.clone().unwrap_or_else(|| config.output_dir.clone());

    // Narrow the config to this single cell and reuse grid validation.
    let cell = ExperimentConfig {
        methods: vec![method],
        noise_types: vec![noise_type],
        noise_rates: vec![rate],
        seeds: vec![master_seed],
        output_dir: out.clone(),
        ..config
    };
    cell.validate()?;

    let split = prepare_dataset(&cell)?;
    let (noise_seed, train_seed) = run_seeds(
        master_seed,
        noise_type,
        rate,
        method,
        cell.share_noise_across_methods,
    );
    let (noisy_labels, noise_report) = inject_noise(
        &split.train_labels,
        &NoiseSpec {
            noise_type,
            rate,
            seed: noise_seed,
        },
    )?;
    let outcome = run_single(
        method,
        &split.train_features,
        &noisy_labels,
        &split.test_features,
        &split.test_labels,
        cell.n_hidden,
        &cell.method_configs(),
        &TrainConfig {
            seed: train_seed,
            ..cell.train
        },
        Some(rate),
    )?;

    std::fs::create_dir_all(&out).map_err(|e| Error::IoAt {
        path: out.clone(),
        source: e,
    })?;
    let metrics_path = out.join("metrics.csv");
    let epochs_path = out.join("epochs.csv");
    let report_path = out.join("noise_report.csv");
    write_atomic(
        &metrics_path,
        &format!(
            "method,noise_type,noise_rate,seed,best_map_micro,best_map_macro,\
             f1_micro_at_best,f1_macro_at_best,best_epoch,final_train_loss\n\
             {},{},{},{},{},{},{},{},{},{}\n",
            method,
            noise_type,
            rate,
            master_seed,
            outcome.best_map_micro,
            outcome.best_map_macro,
            outcome.f1_micro_at_best,
            outcome.f1_macro_at_best,
            outcome.best_epoch,
            outcome.final_train_loss
        ),
    )?;
    write_epoch_log_csv(&epochs_path, &outcome.epoch_log)?;
    write_noise_report_csv(&report_path, &noise_report)?;

    println!(
        "trained {method} under {noise_type}@{rate} (seed {master_seed}): \
         best mAP-micro {:.4} (epoch {}), best mAP-macro {:.4} -> {}, {}",
        outcome.best_map_micro,
        outcome.best_epoch,
        outcome.best_map_macro,
        metrics_path.display(),
        epochs_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    // Scores share the features CSV format; re-validate range as scores.
    let raw = mlnoise::data::read_features_csv(&args.scores)?;
    let scores = ScoreMatrix::new(raw.array().clone())?;
    let labels = read_labels_csv(&args.labels)?;
    let report = MetricsReport::compute(&scores, &labels, args.threshold)?;
    write_metrics_csv(&args.out, &report)?;
    println!(
        "mAP-micro {:.6}, mAP-macro {:.6} ({} classes excluded), F1-micro {:.6}, F1-macro {:.6} -> {}",
        report.map_micro,
        report.map_macro,
        report.n_classes_excluded_from_macro,
        report.f1_micro,
        report.f1_macro,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_grid(args: GridArgs) -> Result<ExitCode> {
    let mut config = load_config(args.config.as_ref())?;
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    let outcome = run_grid(&config)?;
    println!(
        "grid finished: {} runs ok, {} failed; wrote {} files under {}",
        outcome.results.len(),
        outcome.failures.len(),
        outcome.files_written.len(),
        config.output_dir.display()
    );
    for f in &outcome.failures {
        eprintln!(
            "failed run: {} {} rate {} seed {}: {}",
            f.method, f.noise_type, f.noise_rate, f.seed, f.message
        );
    }
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

// ======================================================================
// check: numeric self-test
// ======================================================================

type CheckFn = fn() -> std::result::Result<String, String>;

fn cmd_check() -> Result<ExitCode> {
    let checks: Vec<(&str, CheckFn)> = vec![
        ("gradient vs finite differences (bce)", check_grad_bce),
        ("gradient vs finite differences (sat)", check_grad_sat),
        ("gradient vs finite differences (elr)", check_grad_elr),
        ("gradient vs finite differences (jocor)", check_grad_jocor),
        ("frozen loss and schedule values", check_frozen_values),
        ("noise flip exactness (all types)", check_noise_exactness),
        ("average precision vs naive oracle", check_ap_oracle),
    ];
    let mut all_ok = true;
    for (name, run) in checks {
        match run() {
            Ok(detail) => println!("check: {name:<45} PASS ({detail})"),
            Err(detail) => {
                all_ok = false;
                println!("check: {name:<45} FAIL ({detail})");
            }
        }
    }
    Ok(if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn check_instance(
    seed: u64,
    n: usize,
    d: usize,
    h: usize,
    c: usize,
) -> (
    mlnoise::data::FeatureMatrix,
    mlnoise::data::LabelMatrix,
    mlnoise::nn::MlpParams,
) {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = mlnoise::data::FeatureMatrix::new(ndarray::Array2::from_shape_fn((n, d), |_| {
        rng.gen::<f64>() * 2.0 - 1.0
    }))
    .expect("valid features");
    let y = mlnoise::data::LabelMatrix::new(ndarray::Array2::from_shape_fn((n, c), |_| {
        u8::from(rng.gen::<bool>())
    }))
    .expect("valid labels");
    let params = mlnoise::nn::init_params(d, h, c, seed ^ 0xABCD);
    (x, y, params)
}

const GRAD_TOLERANCE: f64 = 1e-4;

fn grad_verdict(err: f64) -> std::result::Result<String, String> {
    if err < GRAD_TOLERANCE {
        Ok(format!("max rel err {err:.2e}"))
    } else {
        Err(format!("max rel err {err:.2e} >= {GRAD_TOLERANCE:.0e}"))
    }
}

fn check_grad_bce() -> std::result::Result<String, String> {
    use mlnoise::nn::{backward, finite_diff_check, forward};
    use mlnoise::objectives::bce_loss;
    let (x, y, params) = check_instance(11, 12, 5, 8, 4);
    let targets = y.to_f64();
    let scores = forward(&params, &x).expect("forward");
    let (_, dscores) = bce_loss(&scores, &targets).expect("loss");
    let analytic = backward(&params, &x, &dscores).expect("backward");
    let err = finite_diff_check(
        &params,
        |p| {
            let s = forward(p, &x).expect("forward");
            bce_loss(&s, &targets).expect("loss").0
        },
        &analytic,
        1e-5,
    );
    grad_verdict(err)
}

fn check_grad_sat() -> std::result::Result<String, String> {
    use mlnoise::nn::{backward, finite_diff_check, forward};
    use mlnoise::objectives::{sat_loss, sat_update_targets, SatState};
    let (x, y, params) = check_instance(12, 12, 5, 8, 4);
    let rows: Vec<usize> = (0..12).collect();
    let mut state = SatState::from_labels(&y);
    let scores0 = forward(&params, &x).expect("forward");
    sat_update_targets(&mut state, &scores0, &rows, 0.9);
    let scores = forward(&params, &x).expect("forward");
    let (_, dscores) = sat_loss(&scores, &state, &rows).expect("loss");
    let analytic = backward(&params, &x, &dscores).expect("backward");
    let err = finite_diff_check(
        &params,
        |p| {
            let s = forward(p, &x).expect("forward");
            sat_loss(&s, &state, &rows).expect("loss").0
        },
        &analytic,
        1e-5,
    );
    grad_verdict(err)
}

fn check_grad_elr() -> std::result::Result<String, String> {
    use mlnoise::nn::{backward, finite_diff_check, forward};
    use mlnoise::objectives::{elr_loss, elr_update_targets, ElrConfig, ElrState};
    let (x, y, params) = check_instance(13, 12, 5, 8, 4);
    let rows: Vec<usize> = (0..12).collect();
    let mut state = ElrState::zeros(12, 4);
    let scores0 = forward(&params, &x).expect("forward");
    elr_update_targets(&mut state, &scores0, &rows, 0.7);
    let cfg = ElrConfig::default();
    let scores = forward(&params, &x).expect("forward");
    let (_, dscores) = elr_loss(&scores, &y, &state, &rows, &cfg).expect("loss");
    let analytic = backward(&params, &x, &dscores).expect("backward");
    let err = finite_diff_check(
        &params,
        |p| {
            let s = forward(p, &x).expect("forward");
            elr_loss(&s, &y, &state, &rows, &cfg).expect("loss").0
        },
        &analytic,
        1e-5,
    );
    grad_verdict(err)
}

fn check_grad_jocor() -> std::result::Result<String, String> {
    use mlnoise::nn::{backward, finite_diff_check, forward, init_params};
    use mlnoise::objectives::{jocor_label_losses, jocor_selected_loss, select_small_loss_labels};
    let (x, y, params_f) = check_instance(14, 12, 5, 8, 4);
    let params_g = init_params(5, 8, 4, 4242);
    let targets = y.to_f64();
    let lambda_j = 0.3;
    let sf = forward(&params_f, &x).expect("forward");
    let sg = forward(&params_g, &x).expect("forward");
    let entries = jocor_label_losses(&sf, &sg, &targets, lambda_j).expect("entries");
    let mask = select_small_loss_labels(&entries, 0.8);
    let (_, grad_f, grad_g) =
        jocor_selected_loss(&sf, &sg, &targets, lambda_j, &mask).expect("loss");

    let analytic_f = backward(&params_f, &x, &grad_f).expect("backward");
    let err_f = finite_diff_check(
        &params_f,
        |p| {
            let s = forward(p, &x).expect("forward");
            jocor_selected_loss(&s, &sg, &targets, lambda_j, &mask)
                .expect("loss")
                .0
        },
        &analytic_f,
        1e-5,
    );
    let analytic_g = backward(&params_g, &x, &grad_g).expect("backward");
    let err_g = finite_diff_check(
        &params_g,
        |p| {
            let s = forward(p, &x).expect("forward");
            jocor_selected_loss(&sf, &s, &targets, lambda_j, &mask)
                .expect("loss")
                .0
        },
        &analytic_g,
        1e-5,
    );
    grad_verdict(err_f.max(err_g))
}

fn check_frozen_values() -> std::result::Result<String, String> {
    use mlnoise::objectives::{forget_rate, sym_kl_bernoulli};
    let mut failures = Vec::new();

    // BCE at p = 0.5 over two classes of one example: 2 ln 2.
    let scores = ScoreMatrix::new(ndarray::array![[0.5, 0.5]]).expect("scores");
    let targets = ndarray::array![[1.0, 0.0]];
    let (loss, _) = mlnoise::objectives::bce_loss(&scores, &targets).expect("loss");
    if (loss - 2.0 * std::f64::consts::LN_2).abs() > 1e-12 {
        failures.push(format!("bce(0.5) = {loss}, want 2 ln 2"));
    }

    // Symmetric KL at (0.9, 0.1): 0.8 ln 81.
    let v = sym_kl_bernoulli(0.9, 0.1);
    if (v - 0.8 * 81.0f64.ln()).abs() > 1e-12 {
        failures.push(format!("sym_kl(0.9, 0.1) = {v}, want 0.8 ln 81"));
    }

    // Forget-rate ramp: epoch 2 of 5 toward 0.2 is 0.08.
    let fr = forget_rate(2, 0.2, 5);
    if (fr - 0.08).abs() > 1e-15 {
        failures.push(format!("forget_rate(2, 0.2, 5) = {fr}, want 0.08"));
    }

    // AP of the worked three-item ranking: 5/6.
    let ap = mlnoise::metrics::average_precision(&[0.9, 0.8, 0.3], &[1, 0, 1])
        .expect("defined");
    if (ap - 5.0 / 6.0).abs() > 1e-12 {
        failures.push(format!("ap = {ap}, want 5/6"));
    }

    if failures.is_empty() {
        Ok("4 pinned values".into())
    } else {
        Err(failures.join("; "))
    }
}

fn check_noise_exactness() -> std::result::Result<String, String> {
    use mlnoise::noise::{class_present_counts, planned_flips};
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let labels = mlnoise::data::LabelMatrix::new(ndarray::Array2::from_shape_fn(
        (120, 7),
        |_| u8::from(rng.gen::<f64>() < 0.4),
    ))
    .expect("labels");
    let before = class_present_counts(&labels);

    for noise_type in NoiseType::ALL {
        for rate in [0.1, 0.5, 1.0] {
            let spec = NoiseSpec { noise_type, rate, seed: 7 };
            let (noisy, report) = inject_noise(&labels, &spec).expect("inject");
            let after = class_present_counts(&noisy);
            for c in 0..labels.n_classes() {
                let planned = planned_flips(before[c], rate);
                let (expect_add, expect_sub) = match noise_type {
                    NoiseType::Additive => {
                        (planned.min(labels.n_examples() - before[c]), 0)
                    }
                    NoiseType::Subtractive => (0, planned),
                    NoiseType::Mixed => {
                        (planned.min(labels.n_examples() - before[c]), planned)
                    }
                };
                if report.performed_add[c] != expect_add
                    || report.performed_sub[c] != expect_sub
                    || after[c] != before[c] + expect_add - expect_sub
                {
                    return Err(format!(
                        "{noise_type}@{rate} class {c}: add {} sub {} count {} -> {}",
                        report.performed_add[c], report.performed_sub[c], before[c], after[c]
                    ));
                }
            }
        }
    }
    Ok("9 type/rate combinations, exact per-class counts".into())
}

fn check_ap_oracle() -> std::result::Result<String, String> {
    use mlnoise::metrics::average_precision;
    use rand::Rng;
    use rand::SeedableRng;
    // Naive O(n^2) re-implementation with no sorting: rank by counting.
    fn naive(scores: &[f64], labels: &[u8]) -> Option<f64> {
        let n = scores.len();
        let total_pos = labels.iter().filter(|&&l| l == 1).count();
        if total_pos == 0 {
            return None;
        }
        let rank = |i: usize| {
            1 + (0..n)
                .filter(|&j| {
                    j != i && (scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                })
                .count()
        };
        let mut sum = 0.0;
        for i in 0..n {
            if labels[i] == 1 {
                let r = rank(i);
                let tp = (0..n).filter(|&j| labels[j] == 1 && rank(j) <= r).count();
                sum += tp as f64 / r as f64;
            }
        }
        Some(sum / total_pos as f64)
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
    let mut max_diff = 0.0f64;
    let mut compared = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=40);
        // Coarse grid so ties exercise the tie-break rule in both paths.
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect();
        let l: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<bool>())).collect();
        match (average_precision(&s, &l), naive(&s, &l)) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                max_diff = max_diff.max((a - b).abs());
                compared += 1;
            }
            (a, b) => return Err(format!("definedness mismatch: {a:?} vs {b:?}")),
        }
    }
    if max_diff < 1e-9 {
        Ok(format!("{compared} instances, max abs diff {max_diff:.2e}"))
    } else {
        Err(format!("max abs diff {max_diff:.2e} >= 1e-9"))
    }
}
