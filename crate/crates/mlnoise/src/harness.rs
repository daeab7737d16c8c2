//! Seeded experiment grid: trains every configured method on every
//! (noise type, noise rate, seed) cell, evaluates on a clean test split
//! after each epoch, and emits results, aggregate, and plot-data CSVs.
//!
//! Reproducibility contract:
//!
//! * Noise is injected into the **training** labels only; test labels are
//!   never touched.
//! * The noise realization of a cell is derived from (seed, noise type,
//!   rate) and — with `share_noise_across_methods`, the default — never from
//!   the method, so methods within a cell train on the identical noisy
//!   matrix (paired comparisons).
//! * Rate-0 cells are independent of the noise type: their derived seeds use
//!   a shared placeholder type tag, so rate-0 rows are byte-identical across
//!   noise types (and are executed once, then replicated per type).
//! * Runs may execute in parallel; the result table is sorted by
//!   (method, noise type, rate, seed) before anything is written, so output
//!   files never depend on scheduling.
//! * Output files are written atomically (temp file + rename), and each run
//!   leaves a small per-run CSV behind; re-running a partially completed
//!   grid reuses those files and produces byte-identical outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    load_dataset, make_synthetic_dataset, train_test_split, DatasetSplit, FeatureMatrix,
    LabelMatrix, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, DEFAULT_F1_THRESHOLD};
use crate::nn::{forward, TrainConfig};
use crate::noise::{inject_noise, NoiseSpec, NoiseType};
use crate::objectives::{
    train_epoch, ElrConfig, JoCorConfig, MethodConfigs, MethodState, SatConfig, TrainMethod,
};
use crate::seed::{self, stream};

// ======================================================================
// Configuration
// ======================================================================

/// Where the dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    /// Generate a synthetic dataset in memory.
    Synthetic(SyntheticSpec),
    /// Load features and labels from headerless CSV files.
    Csv { features: PathBuf, labels: PathBuf },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic(SyntheticSpec::default())
    }
}

/// Full description of one experiment grid. Every field has a default, so a
/// JSON config file only needs the fields it wants to change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Fraction of examples held out as the clean test set.
    pub test_fraction: f64,
    /// Seed of the split permutation (independent of run seeds).
    pub split_seed: u64,
    pub methods: Vec<TrainMethod>,
    pub noise_types: Vec<NoiseType>,
    pub noise_rates: Vec<f64>,
    /// Master seeds; each yields an independent noise realization and
    /// training run per cell.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    /// Hidden width of the classifier.
    pub n_hidden: usize,
    pub sat: SatConfig,
    pub elr: ElrConfig,
    pub jocor: JoCorConfig,
    /// When true (default), all methods in a cell see the same noisy labels;
    /// when false, each method draws its own noise realization.
    pub share_noise_across_methods: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            test_fraction: 0.2,
            split_seed: 0,
            methods: TrainMethod::ALL.to_vec(),
            noise_types: NoiseType::ALL.to_vec(),
            noise_rates: vec![0.0, 0.1, 0.3, 0.5, 0.7],
            seeds: vec![1, 2, 3],
            train: TrainConfig::default(),
            n_hidden: 64,
            sat: SatConfig::default(),
            elr: ElrConfig::default(),
            jocor: JoCorConfig::default(),
            share_noise_across_methods: true,
            output_dir: PathBuf::from("results"),
        }
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, a)| items[..i].contains(a))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if let DatasetConfig::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction must lie strictly inside (0, 1); got {}",
                self.test_fraction
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must not be empty".into()));
        }
        if self.noise_types.is_empty() {
            return Err(Error::InvalidConfig("noise_types must not be empty".into()));
        }
        if self.noise_rates.is_empty() {
            return Err(Error::InvalidConfig("noise_rates must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        for &rate in &self.noise_rates {
            if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
                return Err(Error::InvalidConfig(format!(
                    "noise rates must lie in [0, 1]; got {rate}"
                )));
            }
        }
        if has_duplicates(&self.methods)
            || has_duplicates(&self.noise_types)
            || has_duplicates(&self.noise_rates)
            || has_duplicates(&self.seeds)
        {
            return Err(Error::InvalidConfig(
                "methods, noise_types, noise_rates, and seeds must not contain duplicates".into(),
            ));
        }
        if self.n_hidden == 0 {
            return Err(Error::InvalidConfig("n_hidden must be at least 1".into()));
        }
        self.train.validate()?;
        self.method_configs().validate()
    }

    pub fn method_configs(&self) -> MethodConfigs {
        MethodConfigs {
            sat: self.sat,
            elr: self.elr,
            jocor: self.jocor,
        }
    }

    /// Parse a JSON config file. Missing fields take their defaults.
    pub fn from_json_file(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::IoAt {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

// ======================================================================
// Seed derivation per run
// ======================================================================

/// Noise-type tag entering seed derivation. At rate 0 the noise type cannot
/// matter, so a shared placeholder keeps rate-0 runs identical across types.
fn type_tag(noise_type: NoiseType, rate: f64) -> u64 {
    if rate == 0.0 {
        stream::RATE_ZERO_TYPE
    } else {
        noise_type.stream_id()
    }
}

/// Seeds of one run: (noise seed, training seed). Derived from the master
/// seed, the noise type, and the rate — never from the method, unless
/// `share_noise` is false, in which case the noise seed also mixes in the
/// method so each method draws its own noise realization.
pub fn run_seeds(
    master_seed: u64,
    noise_type: NoiseType,
    rate: f64,
    method: TrainMethod,
    share_noise: bool,
) -> (u64, u64) {
    let tag = type_tag(noise_type, rate);
    let rate_bits = seed::f64_bits(rate);
    let noise_seed = if share_noise {
        seed::derive(&[master_seed, stream::NOISE, tag, rate_bits])
    } else {
        seed::derive(&[master_seed, stream::NOISE, tag, rate_bits, method.stream_id()])
    };
    let train_seed = seed::derive(&[master_seed, stream::TRAIN, tag, rate_bits]);
    (noise_seed, train_seed)
}

// ======================================================================
// Single run
// ======================================================================

/// Evaluation snapshot after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochEval {
    pub epoch: usize,
    pub train_loss: f64,
    pub map_micro: f64,
    pub map_macro: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
}

/// Outcome of one training run: headline numbers plus the full epoch log.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleRunOutcome {
    /// Maximum test mAP-micro over all epochs.
    pub best_map_micro: f64,
    /// Maximum test mAP-macro over all epochs (independent maximum; may
    /// occur at a different epoch than the mAP-micro best).
    pub best_map_macro: f64,
    /// F1 scores at the best epoch (selected by mAP-micro).
    pub f1_micro_at_best: f64,
    pub f1_macro_at_best: f64,
    /// Earliest epoch attaining the maximum test mAP-micro.
    pub best_epoch: usize,
    /// Mean training loss of the final epoch.
    pub final_train_loss: f64,
    pub epoch_log: Vec<EpochEval>,
}

/// Train one method on (possibly noisy) training labels and evaluate on the
/// clean test set after every epoch. `train.seed` must already be the
/// derived per-run training seed. `known_noise_rate` feeds JoCoR's default
/// forget rate.
#[allow(clippy::too_many_arguments)]
pub fn run_single(
    method: TrainMethod,
    train_features: &FeatureMatrix,
    train_labels: &LabelMatrix,
    test_features: &FeatureMatrix,
    test_labels: &LabelMatrix,
    n_hidden: usize,
    configs: &MethodConfigs,
    train: &TrainConfig,
    known_noise_rate: Option<f64>,
) -> Result<SingleRunOutcome> {
    let mut state = MethodState::new(
        method,
        train_features.n_features(),
        n_hidden,
        train_labels.n_classes(),
        train_labels,
        configs,
        train.seed,
        known_noise_rate,
    )?;

    let mut epoch_log = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let outcome = train_epoch(&mut state, train_features, train_labels, train, epoch)?;
        let scores = forward(state.eval_params(), test_features)?;
        let report = MetricsReport::compute(&scores, test_labels, DEFAULT_F1_THRESHOLD)?;
        epoch_log.push(EpochEval {
            epoch,
            train_loss: outcome.mean_loss,
            map_micro: report.map_micro,
            map_macro: report.map_macro,
            f1_micro: report.f1_micro,
            f1_macro: report.f1_macro,
        });
    }

    let best = epoch_log
        .iter()
        .max_by(|a, b| {
            a.map_micro
                .partial_cmp(&b.map_micro)
                .expect("metrics are finite")
                // max_by returns the LAST maximum; prefer the earliest.
                .then(b.epoch.cmp(&a.epoch))
        })
        .expect("at least one epoch");
    let best_map_macro = epoch_log
        .iter()
        .map(|e| e.map_macro)
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(SingleRunOutcome {
        best_map_micro: best.map_micro,
        best_map_macro,
        f1_micro_at_best: best.f1_micro,
        f1_macro_at_best: best.f1_macro,
        best_epoch: best.epoch,
        final_train_loss: epoch_log.last().expect("at least one epoch").train_loss,
        epoch_log,
    })
}

/// Per-epoch log CSV with columns
/// `epoch,train_loss,map_micro,map_macro,f1_micro,f1_macro`.
pub fn write_epoch_log_csv(path: &Path, log: &[EpochEval]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,map_micro,map_macro,f1_micro,f1_macro\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch, e.train_loss, e.map_micro, e.map_macro, e.f1_micro, e.f1_macro
        ));
    }
    write_atomic(path, &out)
}

// ======================================================================
// Grid execution
// ======================================================================

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub method: TrainMethod,
    pub noise_type: NoiseType,
    pub noise_rate: f64,
    pub seed: u64,
    pub best_map_micro: f64,
    pub best_map_macro: f64,
    pub f1_micro_at_best: f64,
    pub f1_macro_at_best: f64,
    pub best_epoch: usize,
    pub final_train_loss: f64,
}

impl RunResult {
    fn sort_key(&self) -> (TrainMethod, NoiseType, f64, u64) {
        (self.method, self.noise_type, self.noise_rate, self.seed)
    }
}

fn compare_results(a: &RunResult, b: &RunResult) -> std::cmp::Ordering {
    let (ma, ta, ra, sa) = a.sort_key();
    let (mb, tb, rb, sb) = b.sort_key();
    ma.cmp(&mb)
        .then(ta.cmp(&tb))
        .then(ra.total_cmp(&rb))
        .then(sa.cmp(&sb))
}

/// A run that failed; recorded, not fatal to the rest of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub method: TrainMethod,
    pub noise_type: NoiseType,
    pub noise_rate: f64,
    pub seed: u64,
    pub message: String,
}

/// Everything a finished grid hands back.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    /// Sorted by (method, noise type, rate, seed).
    pub results: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
    /// Files written into the output directory.
    pub files_written: Vec<PathBuf>,
}

/// Load or generate the dataset named by the config and split it.
pub fn prepare_dataset(config: &ExperimentConfig) -> Result<DatasetSplit> {
    let (features, labels) = match &config.dataset {
        DatasetConfig::Synthetic(spec) => make_synthetic_dataset(spec)?,
        DatasetConfig::Csv { features, labels } => load_dataset(features, labels)?,
    };
    train_test_split(&features, &labels, config.test_fraction, config.split_seed)
}

/// Identity of one run within the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RunKey {
    method: TrainMethod,
    noise_type: NoiseType,
    rate: f64,
    seed: u64,
}

/// Execution unit: one actual training. Rate-0 runs are type-independent, so
/// one execution may stand in for several grid rows (`expand_to` lists the
/// noise types whose rows it fills).
#[derive(Debug, Clone)]
struct RunTask {
    method: TrainMethod,
    /// Representative noise type (the first configured one for rate 0).
    noise_type: NoiseType,
    rate: f64,
    seed: u64,
    expand_to: Vec<NoiseType>,
}

fn plan_tasks(config: &ExperimentConfig) -> Vec<RunTask> {
    let mut tasks = Vec::new();
    for &method in &config.methods {
        for &rate in &config.noise_rates {
            for &seed in &config.seeds {
                if rate == 0.0 {
                    // One execution, replicated to every configured type.
                    tasks.push(RunTask {
                        method,
                        noise_type: config.noise_types[0],
                        rate,
                        seed,
                        expand_to: config.noise_types.clone(),
                    });
                } else {
                    for &noise_type in &config.noise_types {
                        tasks.push(RunTask {
                            method,
                            noise_type,
                            rate,
                            seed,
                            expand_to: vec![noise_type],
                        });
                    }
                }
            }
        }
    }
    tasks
}

/// File that stores one finished run, enabling resume.
fn run_file_path(output_dir: &Path, key: &RunKey) -> PathBuf {
    let rate = format!("{}", key.rate).replace('.', "p");
    output_dir.join("runs").join(format!(
        "run_{}_{}_{}_s{}.csv",
        key.method, key.noise_type, rate, key.seed
    ))
}

const RESULT_COLUMNS: &str = "method,noise_type,noise_rate,seed,best_map_micro,best_map_macro,\
                              f1_micro_at_best,f1_macro_at_best,best_epoch,final_train_loss";

fn result_header() -> String {
    RESULT_COLUMNS.replace(char::is_whitespace, "")
}

fn result_row(r: &RunResult) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.method,
        r.noise_type,
        r.noise_rate,
        r.seed,
        r.best_map_micro,
        r.best_map_macro,
        r.f1_micro_at_best,
        r.f1_macro_at_best,
        r.best_epoch,
        r.final_train_loss
    )
}

fn parse_result_row(line: &str) -> Option<RunResult> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 10 {
        return None;
    }
    Some(RunResult {
        method: fields[0].parse().ok()?,
        noise_type: fields[1].parse().ok()?,
        noise_rate: fields[2].parse().ok()?,
        seed: fields[3].parse().ok()?,
        best_map_micro: fields[4].parse().ok()?,
        best_map_macro: fields[5].parse().ok()?,
        f1_micro_at_best: fields[6].parse().ok()?,
        f1_macro_at_best: fields[7].parse().ok()?,
        best_epoch: fields[8].parse().ok()?,
        final_train_loss: fields[9].parse().ok()?,
    })
}

/// Try to read a finished run back from disk; any malformed or mismatched
/// file is ignored (the run re-executes).
fn load_run_file(output_dir: &Path, key: &RunKey) -> Option<RunResult> {
    let path = run_file_path(output_dir, key);
    let text = fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    if lines.next()? != result_header() {
        return None;
    }
    let row = parse_result_row(lines.next()?)?;
    let matches = row.method == key.method
        && row.noise_type == key.noise_type
        && row.noise_rate == key.rate
        && row.seed == key.seed;
    matches.then_some(row)
}

fn save_run_file(output_dir: &Path, result: &RunResult) -> Result<()> {
    let key = RunKey {
        method: result.method,
        noise_type: result.noise_type,
        rate: result.noise_rate,
        seed: result.seed,
    };
    let path = run_file_path(output_dir, &key);
    write_atomic(&path, &format!("{}\n{}\n", result_header(), result_row(result)))
}

/// Execute one task from scratch: inject noise into the training labels,
/// train, evaluate. Returns one RunResult per noise type the task stands for.
fn execute_task(
    task: &RunTask,
    config: &ExperimentConfig,
    split: &DatasetSplit,
) -> Result<Vec<RunResult>> {
    let (noise_seed, train_seed) = run_seeds(
        task.seed,
        task.noise_type,
        task.rate,
        task.method,
        config.share_noise_across_methods,
    );
    let noise_spec = NoiseSpec {
        noise_type: task.noise_type,
        rate: task.rate,
        seed: noise_seed,
    };
    let (noisy_labels, _report) = inject_noise(&split.train_labels, &noise_spec)?;
    let train_cfg = TrainConfig {
        seed: train_seed,
        ..config.train
    };
    let outcome = run_single(
        task.method,
        &split.train_features,
        &noisy_labels,
        &split.test_features,
        &split.test_labels,
        config.n_hidden,
        &config.method_configs(),
        &train_cfg,
        Some(task.rate),
    )?;
    Ok(task
        .expand_to
        .iter()
        .map(|&noise_type| RunResult {
            method: task.method,
            noise_type,
            noise_rate: task.rate,
            seed: task.seed,
            best_map_micro: outcome.best_map_micro,
            best_map_macro: outcome.best_map_macro,
            f1_micro_at_best: outcome.f1_micro_at_best,
            f1_macro_at_best: outcome.f1_macro_at_best,
            best_epoch: outcome.best_epoch,
            final_train_loss: outcome.final_train_loss,
        })
        .collect())
}

/// Run the whole grid: validate, prepare data, execute every run (reusing
/// per-run files left by earlier attempts), and write `results.csv`,
/// `aggregate.csv`, and the three plot-data CSVs into the output directory.
/// Individual run failures are collected in the outcome, not raised.
pub fn run_grid(config: &ExperimentConfig) -> Result<GridOutcome> {
    config.validate()?;
    let split = prepare_dataset(config)?;
    fs::create_dir_all(config.output_dir.join("runs")).map_err(|e| Error::IoAt {
        path: config.output_dir.join("runs"),
        source: e,
    })?;

    let tasks = plan_tasks(config);
    let executed: Vec<std::result::Result<Vec<RunResult>, RunFailure>> = tasks
        .par_iter()
        .map(|task| {
            // Resume: reuse every row of the task that is already on disk.
            let cached: Vec<Option<RunResult>> = task
                .expand_to
                .iter()
                .map(|&noise_type| {
                    load_run_file(
                        &config.output_dir,
                        &RunKey {
                            method: task.method,
                            noise_type,
                            rate: task.rate,
                            seed: task.seed,
                        },
                    )
                })
                .collect();
            if cached.iter().all(Option::is_some) {
                return Ok(cached.into_iter().flatten().collect());
            }
            match execute_task(task, config, &split) {
                Ok(rows) => {
                    for row in &rows {
                        if let Err(e) = save_run_file(&config.output_dir, row) {
                            return Err(RunFailure {
                                method: task.method,
                                noise_type: row.noise_type,
                                noise_rate: task.rate,
                                seed: task.seed,
                                message: e.to_string(),
                            });
                        }
                    }
                    Ok(rows)
                }
                Err(e) => Err(RunFailure {
                    method: task.method,
                    noise_type: task.noise_type,
                    noise_rate: task.rate,
                    seed: task.seed,
                    message: e.to_string(),
                }),
            }
        })
        .collect();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for item in executed {
        match item {
            Ok(rows) => results.extend(rows),
            Err(f) => failures.push(f),
        }
    }
    results.sort_by(compare_results);
    failures.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.noise_type.cmp(&b.noise_type))
            .then(a.noise_rate.total_cmp(&b.noise_rate))
            .then(a.seed.cmp(&b.seed))
    });

    let mut files_written = Vec::new();
    if !results.is_empty() {
        let results_path = config.output_dir.join("results.csv");
        write_results_csv(&results_path, &results)?;
        files_written.push(results_path);

        let aggregated = aggregate(&results)?;
        let aggregate_path = config.output_dir.join("aggregate.csv");
        write_aggregate_csv(&aggregate_path, &aggregated)?;
        files_written.push(aggregate_path);

        let baseline = if config.methods.contains(&TrainMethod::Bce) {
            TrainMethod::Bce
        } else {
            config.methods[0]
        };
        // The drop-vs-0% file only exists when a 0% baseline was requested;
        // a grid without rate 0 still gets the two rate-curve files.
        if config.noise_rates.contains(&0.0) {
            files_written.extend(emit_plot_data(&aggregated, baseline, &config.output_dir)?);
        } else {
            files_written.extend(emit_rate_curves(&aggregated, baseline, &config.output_dir)?);
        }
    }
    if !failures.is_empty() {
        let failures_path = config.output_dir.join("failures.csv");
        let mut out = String::from("method,noise_type,noise_rate,seed,message\n");
        for f in &failures {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                f.method,
                f.noise_type,
                f.noise_rate,
                f.seed,
                f.message.replace([',', '\n'], ";")
            ));
        }
        write_atomic(&failures_path, &out)?;
        files_written.push(failures_path);
    }

    Ok(GridOutcome {
        results,
        failures,
        files_written,
    })
}

/// `results.csv` with exactly the documented columns, sorted.
pub fn write_results_csv(path: &Path, results: &[RunResult]) -> Result<()> {
    let mut out = String::from(&result_header());
    out.push('\n');
    for r in results {
        out.push_str(&result_row(r));
        out.push('\n');
    }
    write_atomic(path, &out)
}

// ======================================================================
// Aggregation
// ======================================================================

/// Mean and sample standard deviation of every score column of the runs
/// sharing one (method, noise type, rate) key.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: TrainMethod,
    pub noise_type: NoiseType,
    pub noise_rate: f64,
    pub n_runs: usize,
    pub mean_map_micro: f64,
    pub std_map_micro: f64,
    pub mean_map_macro: f64,
    pub std_map_macro: f64,
    pub mean_f1_micro: f64,
    pub std_f1_micro: f64,
    pub mean_f1_macro: f64,
    pub std_f1_macro: f64,
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregate results over seeds, keyed by (method, noise type, rate),
/// sorted by that key.
pub fn aggregate(results: &[RunResult]) -> Result<Vec<AggregateRow>> {
    if results.is_empty() {
        return Err(Error::InvalidConfig(
            "aggregate needs at least one result".into(),
        ));
    }
    // BTreeMap over an orderable key keeps the output sorted. Rates are
    // finite and validated, so their bit patterns order consistently via the
    // sort at the end.
    let mut groups: BTreeMap<(TrainMethod, NoiseType, u64), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.method, r.noise_type, seed::f64_bits(r.noise_rate)))
            .or_default()
            .push(r);
    }
    let mut rows: Vec<AggregateRow> = groups
        .into_values()
        .map(|group| {
            let collect = |f: fn(&RunResult) -> f64| -> Vec<f64> {
                group.iter().map(|r| f(r)).collect()
            };
            let (mean_map_micro, std_map_micro) =
                mean_and_sample_std(&collect(|r| r.best_map_micro));
            let (mean_map_macro, std_map_macro) =
                mean_and_sample_std(&collect(|r| r.best_map_macro));
            let (mean_f1_micro, std_f1_micro) =
                mean_and_sample_std(&collect(|r| r.f1_micro_at_best));
            let (mean_f1_macro, std_f1_macro) =
                mean_and_sample_std(&collect(|r| r.f1_macro_at_best));
            AggregateRow {
                method: group[0].method,
                noise_type: group[0].noise_type,
                noise_rate: group[0].noise_rate,
                n_runs: group.len(),
                mean_map_micro,
                std_map_micro,
                mean_map_macro,
                std_map_macro,
                mean_f1_micro,
                std_f1_micro,
                mean_f1_macro,
                std_f1_macro,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.noise_type.cmp(&b.noise_type))
            .then(a.noise_rate.total_cmp(&b.noise_rate))
    });
    Ok(rows)
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut out = String::from(
        "method,noise_type,noise_rate,n_runs,mean_map_micro,std_map_micro,mean_map_macro,\
         std_map_macro,mean_f1_micro,std_f1_micro,mean_f1_macro,std_f1_macro\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.noise_type,
            r.noise_rate,
            r.n_runs,
            r.mean_map_micro,
            r.std_map_micro,
            r.mean_map_macro,
            r.std_map_macro,
            r.mean_f1_micro,
            r.std_f1_micro,
            r.mean_f1_macro,
            r.std_f1_macro
        ));
    }
    write_atomic(path, &out)
}

// ======================================================================
// Plot data
// ======================================================================

/// Emit the three plot-data CSVs from aggregated results; returns the paths
/// written.
///
/// * `fig5.csv` — mean mAP-micro and mAP-macro vs rate per noise type, for
///   the baseline method. Columns `metric,noise_type,noise_rate,value`.
/// * `fig6.csv` — mean mAP-micro and F1-micro vs rate per noise type, same
///   columns and method (its mAP-micro values match fig5's exactly).
/// * `fig7.csv` — per method, noise type, and rate: mean score at the rate
///   minus mean score at rate 0, for mAP-micro and mAP-macro. Columns
///   `metric,method,noise_type,noise_rate,drop`. Missing rate-0 rows are an
///   error naming the method and type.
pub fn emit_plot_data(
    aggregated: &[AggregateRow],
    baseline_method: TrainMethod,
    output_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let fig7 = build_fig7(aggregated)?;
    let mut paths = emit_rate_curves(aggregated, baseline_method, output_dir)?;
    let fig7_path = output_dir.join("fig7.csv");
    write_atomic(&fig7_path, &fig7)?;
    paths.push(fig7_path);
    Ok(paths)
}

/// Write only `fig5.csv` and `fig6.csv` (no rate-0 baseline needed).
pub fn emit_rate_curves(
    aggregated: &[AggregateRow],
    baseline_method: TrainMethod,
    output_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let baseline: Vec<&AggregateRow> = aggregated
        .iter()
        .filter(|r| r.method == baseline_method)
        .collect();

    type MetricColumn = (&'static str, fn(&AggregateRow) -> f64);
    let build = |metrics: [MetricColumn; 2]| -> String {
        let mut out = String::from("metric,noise_type,noise_rate,value\n");
        for (metric, value) in metrics {
            for row in &baseline {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    metric,
                    row.noise_type,
                    row.noise_rate,
                    value(row)
                ));
            }
        }
        out
    };
    let fig5 = build([
        ("map_micro", |r| r.mean_map_micro),
        ("map_macro", |r| r.mean_map_macro),
    ]);
    let fig6 = build([
        ("map_micro", |r| r.mean_map_micro),
        ("f1_micro", |r| r.mean_f1_micro),
    ]);

    let fig5_path = output_dir.join("fig5.csv");
    let fig6_path = output_dir.join("fig6.csv");
    write_atomic(&fig5_path, &fig5)?;
    write_atomic(&fig6_path, &fig6)?;
    Ok(vec![fig5_path, fig6_path])
}

fn build_fig7(aggregated: &[AggregateRow]) -> Result<String> {
    let mut fig7 = String::from("metric,method,noise_type,noise_rate,drop\n");
    for (metric, value) in [
        ("map_micro", (|r: &AggregateRow| r.mean_map_micro) as fn(&AggregateRow) -> f64),
        ("map_macro", |r: &AggregateRow| r.mean_map_macro),
    ] {
        for row in aggregated {
            let zero = aggregated
                .iter()
                .find(|z| {
                    z.method == row.method && z.noise_type == row.noise_type && z.noise_rate == 0.0
                })
                .ok_or_else(|| Error::MissingRateZero {
                    method: row.method.to_string(),
                    noise_type: row.noise_type.to_string(),
                })?;
            fig7.push_str(&format!(
                "{},{},{},{},{}\n",
                metric,
                row.method,
                row.noise_type,
                row.noise_rate,
                value(row) - value(zero)
            ));
        }
    }
    Ok(fig7)
}

// ======================================================================
// Atomic file writes
// ======================================================================

/// Write via a temp file in the same directory, then rename over the target,
/// so readers never observe a partially written file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let io_err = |e: std::io::Error| Error::IoAt {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("not a writable path: {}", path.display())))?;
    let tmp = path.with_file_name(format!("{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

// ======================================================================

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig::Synthetic(SyntheticSpec {
                n_examples: 50,
                n_features: 6,
                n_classes: 4,
                mean_labels_per_example: 1.5,
                prototype_scale: 1.0,
                feature_noise_std: 0.5,
                seed: 3,
                class_presence: None,
            }),
            test_fraction: 0.2,
            split_seed: 0,
            methods: vec![TrainMethod::Bce],
            noise_types: vec![NoiseType::Subtractive],
            noise_rates: vec![0.0, 0.5],
            seeds: vec![1],
            train: TrainConfig {
                epochs: 2,
                batch_size: 16,
                learning_rate: 1e-2,
                lr_drop_epoch: 2,
                lr_drop_factor: 5.0,
                weight_decay: 1e-4,
                seed: 0,
            },
            n_hidden: 8,
            sat: SatConfig::default(),
            elr: ElrConfig::default(),
            jocor: JoCorConfig::default(),
            share_noise_across_methods: true,
            output_dir: dir.to_path_buf(),
        }
    }

    // ------------------------------------------------------------------
    // Config
    // ------------------------------------------------------------------

    #[test]
    fn empty_json_gives_full_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.noise_rates, vec![0.0, 0.1, 0.3, 0.5, 0.7]);
        assert_eq!(cfg.seeds.len(), 3);
        assert!(cfg.share_noise_across_methods);
        assert_eq!(cfg.n_hidden, 64);
        assert_eq!(cfg.test_fraction, 0.2);
    }

    #[test]
    fn json_overrides_single_fields() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"methods": ["sat", "jocor"], "noise_rates": [0.0, 0.3],
                "train": {"epochs": 7}, "elr": {"lambda": 1.5}}"#,
        )
        .unwrap();
        assert_eq!(cfg.methods, vec![TrainMethod::Sat, TrainMethod::JoCor]);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.elr.lambda, 1.5);
        assert_eq!(cfg.elr.ema_beta, ElrConfig::default().ema_beta);
    }

    #[test]
    fn dataset_config_round_trips_both_kinds() {
        let synth = DatasetConfig::default();
        let json = serde_json::to_string(&synth).unwrap();
        assert!(json.contains("\"kind\":\"synthetic\""));
        assert_eq!(serde_json::from_str::<DatasetConfig>(&json).unwrap(), synth);

        let csv: DatasetConfig = serde_json::from_str(
            r#"{"kind": "csv", "features": "x.csv", "labels": "y.csv"}"#,
        )
        .unwrap();
        assert_eq!(
            csv,
            DatasetConfig::Csv {
                features: PathBuf::from("x.csv"),
                labels: PathBuf::from("y.csv")
            }
        );
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let dir = PathBuf::from("unused");
        let base = tiny_config(&dir);
        assert!(base.validate().is_ok());

        let mut c = base.clone();
        c.methods.clear();
        assert!(c.validate().is_err(), "empty methods");

        let mut c = base.clone();
        c.noise_rates = vec![0.0, 1.5];
        assert!(c.validate().is_err(), "rate above 1");

        let mut c = base.clone();
        c.noise_rates = vec![0.3, 0.3];
        assert!(c.validate().is_err(), "duplicate rates");

        let mut c = base.clone();
        c.test_fraction = 1.0;
        assert!(c.validate().is_err(), "test fraction 1");

        let mut c = base.clone();
        c.n_hidden = 0;
        assert!(c.validate().is_err(), "zero hidden width");

        let mut c = base;
        c.seeds.clear();
        assert!(c.validate().is_err(), "empty seeds");
    }

    // ------------------------------------------------------------------
    // Seed derivation
    // ------------------------------------------------------------------

    #[test]
    fn rate_zero_seeds_ignore_the_noise_type() {
        for method in [TrainMethod::Bce, TrainMethod::JoCor] {
            let a = run_seeds(7, NoiseType::Additive, 0.0, method, true);
            let b = run_seeds(7, NoiseType::Subtractive, 0.0, method, true);
            let c = run_seeds(7, NoiseType::Mixed, 0.0, method, true);
            assert_eq!(a, b);
            assert_eq!(b, c);
        }
    }

    #[test]
    fn nonzero_rates_separate_types_rates_and_seeds() {
        let base = run_seeds(7, NoiseType::Additive, 0.3, TrainMethod::Bce, true);
        assert_ne!(
            base,
            run_seeds(7, NoiseType::Subtractive, 0.3, TrainMethod::Bce, true)
        );
        assert_ne!(
            base,
            run_seeds(7, NoiseType::Additive, 0.5, TrainMethod::Bce, true)
        );
        assert_ne!(
            base,
            run_seeds(8, NoiseType::Additive, 0.3, TrainMethod::Bce, true)
        );
    }

    #[test]
    fn shared_noise_is_method_independent_and_unshared_is_not() {
        let a = run_seeds(7, NoiseType::Mixed, 0.3, TrainMethod::Bce, true);
        let b = run_seeds(7, NoiseType::Mixed, 0.3, TrainMethod::Elr, true);
        assert_eq!(a, b, "shared noise must not depend on the method");

        let a = run_seeds(7, NoiseType::Mixed, 0.3, TrainMethod::Bce, false);
        let b = run_seeds(7, NoiseType::Mixed, 0.3, TrainMethod::Elr, false);
        assert_ne!(a.0, b.0, "unshared noise seeds must differ per method");
        assert_eq!(a.1, b.1, "training seeds stay method-independent");
    }

    // ------------------------------------------------------------------
    // run_single
    // ------------------------------------------------------------------

    #[test]
    fn run_single_reports_consistent_bests() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let split = prepare_dataset(&config).unwrap();
        let outcome = run_single(
            TrainMethod::Bce,
            &split.train_features,
            &split.train_labels,
            &split.test_features,
            &split.test_labels,
            config.n_hidden,
            &config.method_configs(),
            &TrainConfig { seed: 11, epochs: 4, ..config.train },
            None,
        )
        .unwrap();

        assert_eq!(outcome.epoch_log.len(), 4);
        let max_micro = outcome
            .epoch_log
            .iter()
            .map(|e| e.map_micro)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(outcome.best_map_micro, max_micro);
        let max_macro = outcome
            .epoch_log
            .iter()
            .map(|e| e.map_macro)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(outcome.best_map_macro, max_macro);
        let at_best = &outcome.epoch_log[outcome.best_epoch];
        assert_eq!(at_best.map_micro, outcome.best_map_micro);
        assert_eq!(at_best.f1_micro, outcome.f1_micro_at_best);
        assert_eq!(at_best.f1_macro, outcome.f1_macro_at_best);
        assert_eq!(
            outcome.final_train_loss,
            outcome.epoch_log.last().unwrap().train_loss
        );
        // Earliest epoch wins ties: no earlier epoch may attain the max.
        for e in &outcome.epoch_log[..outcome.best_epoch] {
            assert!(e.map_micro < outcome.best_map_micro);
        }
    }

    #[test]
    fn epoch_log_csv_has_one_row_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let log = vec![
            EpochEval { epoch: 0, train_loss: 1.5, map_micro: 0.5, map_macro: 0.4, f1_micro: 0.3, f1_macro: 0.2 },
            EpochEval { epoch: 1, train_loss: 1.0, map_micro: 0.6, map_macro: 0.5, f1_micro: 0.4, f1_macro: 0.3 },
        ];
        let path = dir.path().join("log.csv");
        write_epoch_log_csv(&path, &log).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "epoch,train_loss,map_micro,map_macro,f1_micro,f1_macro");
        assert_eq!(lines[1], "0,1.5,0.5,0.4,0.3,0.2");
    }

    // ------------------------------------------------------------------
    // Grid
    // ------------------------------------------------------------------

    #[test]
    fn smallest_grid_yields_exactly_one_result_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.noise_rates = vec![0.5];
        let outcome = run_grid(&config).unwrap();
        assert_eq!(outcome.results.len(), 1);
        assert!(outcome.failures.is_empty());
        assert!(config.output_dir.join("results.csv").exists());
        assert!(config.output_dir.join("aggregate.csv").exists());
    }

    #[test]
    fn grid_row_count_covers_the_full_cartesian_product() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.methods = vec![TrainMethod::Bce, TrainMethod::Sat];
        config.noise_types = vec![NoiseType::Additive, NoiseType::Subtractive];
        config.noise_rates = vec![0.0, 0.5];
        config.seeds = vec![1, 2];
        let outcome = run_grid(&config).unwrap();
        assert_eq!(outcome.results.len(), 2 * 2 * 2 * 2);
        assert!(outcome.failures.is_empty());
        // Sorted by (method, type, rate, seed).
        let mut sorted = outcome.results.clone();
        sorted.sort_by(compare_results);
        assert_eq!(outcome.results, sorted);
    }

    #[test]
    fn rate_zero_rows_are_identical_across_noise_types() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.noise_types = vec![NoiseType::Additive, NoiseType::Subtractive, NoiseType::Mixed];
        config.noise_rates = vec![0.0];
        let outcome = run_grid(&config).unwrap();
        assert_eq!(outcome.results.len(), 3);
        let first = &outcome.results[0];
        for row in &outcome.results[1..] {
            assert_eq!(row.best_map_micro, first.best_map_micro);
            assert_eq!(row.best_map_macro, first.best_map_macro);
            assert_eq!(row.f1_micro_at_best, first.f1_micro_at_best);
            assert_eq!(row.f1_macro_at_best, first.f1_macro_at_best);
            assert_eq!(row.best_epoch, first.best_epoch);
            assert_eq!(row.final_train_loss, first.final_train_loss);
        }
    }

    #[test]
    fn grid_outputs_are_deterministic_across_directories() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut config_a = tiny_config(dir_a.path());
        config_a.methods = vec![TrainMethod::Bce, TrainMethod::JoCor];
        let mut config_b = config_a.clone();
        config_b.output_dir = dir_b.path().to_path_buf();

        run_grid(&config_a).unwrap();
        run_grid(&config_b).unwrap();
        for file in ["results.csv", "aggregate.csv", "fig5.csv", "fig6.csv", "fig7.csv"] {
            let a = fs::read(dir_a.path().join(file)).unwrap();
            let b = fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical grids");
        }
    }

    #[test]
    fn resumed_grid_reuses_run_files_and_reproduces_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        run_grid(&config).unwrap();
        let fresh = fs::read_to_string(dir.path().join("results.csv")).unwrap();

        // Remove the merged outputs and one run file; resume must re-execute
        // only what is missing and reproduce identical bytes.
        fs::remove_file(dir.path().join("results.csv")).unwrap();
        fs::remove_file(dir.path().join("aggregate.csv")).unwrap();
        let runs_dir = dir.path().join("runs");
        let a_run: PathBuf = fs::read_dir(&runs_dir)
            .unwrap()
            .next()
            .unwrap()
            .unwrap()
            .path();
        fs::remove_file(&a_run).unwrap();

        run_grid(&config).unwrap();
        let resumed = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(fresh, resumed);
    }

    #[test]
    fn corrupt_run_files_are_re_executed_not_trusted() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        run_grid(&config).unwrap();
        let fresh = fs::read_to_string(dir.path().join("results.csv")).unwrap();

        let runs_dir = dir.path().join("runs");
        for entry in fs::read_dir(&runs_dir).unwrap() {
            fs::write(entry.unwrap().path(), "method,garbage\nnot,a,row\n").unwrap();
        }
        run_grid(&config).unwrap();
        let resumed = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(fresh, resumed);
    }

    #[test]
    fn shared_noise_gives_identical_noisy_matrices_across_methods() {
        let labels = {
            let spec = SyntheticSpec {
                n_examples: 40,
                n_features: 5,
                n_classes: 4,
                seed: 9,
                ..SyntheticSpec::default()
            };
            make_synthetic_dataset(&spec).unwrap().1
        };
        let checksum = |method: TrainMethod, share: bool| {
            let (noise_seed, _) = run_seeds(3, NoiseType::Mixed, 0.5, method, share);
            let spec = NoiseSpec { noise_type: NoiseType::Mixed, rate: 0.5, seed: noise_seed };
            inject_noise(&labels, &spec).unwrap().0.checksum()
        };
        assert_eq!(
            checksum(TrainMethod::Bce, true),
            checksum(TrainMethod::Elr, true)
        );
        assert_ne!(
            checksum(TrainMethod::Bce, false),
            checksum(TrainMethod::Elr, false)
        );
    }

    // ------------------------------------------------------------------
    // Aggregation
    // ------------------------------------------------------------------

    fn result_with(
        method: TrainMethod,
        noise_type: NoiseType,
        rate: f64,
        seed: u64,
        score: f64,
    ) -> RunResult {
        RunResult {
            method,
            noise_type,
            noise_rate: rate,
            seed,
            best_map_micro: score,
            best_map_macro: score,
            f1_micro_at_best: score,
            f1_macro_at_best: score,
            best_epoch: 0,
            final_train_loss: 1.0,
        }
    }

    #[test]
    fn aggregate_computes_mean_and_sample_std() {
        let rows = vec![
            result_with(TrainMethod::Bce, NoiseType::Additive, 0.3, 1, 0.6),
            result_with(TrainMethod::Bce, NoiseType::Additive, 0.3, 2, 0.8),
        ];
        let agg = aggregate(&rows).unwrap();
        assert_eq!(agg.len(), 1);
        assert!((agg[0].mean_map_micro - 0.7).abs() < 1e-15);
        // Sample std of {0.6, 0.8}: sqrt(((0.1)^2 + (0.1)^2) / 1) ≈ 0.1414.
        assert!((agg[0].std_map_micro - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(agg[0].n_runs, 2);
    }

    #[test]
    fn aggregate_single_seed_has_zero_std() {
        let rows = vec![result_with(TrainMethod::Bce, NoiseType::Additive, 0.3, 1, 0.6)];
        let agg = aggregate(&rows).unwrap();
        assert_eq!(agg[0].std_map_micro, 0.0);
        assert_eq!(agg[0].std_f1_macro, 0.0);
    }

    #[test]
    fn aggregate_emits_one_row_per_method_type_rate() {
        let mut rows = Vec::new();
        for method in [TrainMethod::Bce, TrainMethod::Sat] {
            for noise_type in [NoiseType::Additive, NoiseType::Mixed] {
                for rate in [0.0, 0.3, 0.5] {
                    for seed in [1, 2, 3] {
                        rows.push(result_with(method, noise_type, rate, seed, 0.5));
                    }
                }
            }
        }
        let agg = aggregate(&rows).unwrap();
        assert_eq!(agg.len(), 2 * 2 * 3);
        assert!(agg.iter().all(|r| r.n_runs == 3));
    }

    #[test]
    fn aggregate_rejects_empty_input() {
        assert!(aggregate(&[]).is_err());
    }

    // ------------------------------------------------------------------
    // Plot data
    // ------------------------------------------------------------------

    fn demo_aggregate() -> Vec<AggregateRow> {
        let mut rows = Vec::new();
        for (method, base) in [(TrainMethod::Bce, 0.9), (TrainMethod::Sat, 0.85)] {
            for noise_type in [NoiseType::Additive, NoiseType::Subtractive] {
                for (i, rate) in [0.0, 0.3, 0.5].into_iter().enumerate() {
                    let score = base - 0.1 * i as f64;
                    rows.push(AggregateRow {
                        method,
                        noise_type,
                        noise_rate: rate,
                        n_runs: 3,
                        mean_map_micro: score,
                        std_map_micro: 0.01,
                        mean_map_macro: score - 0.05,
                        std_map_macro: 0.01,
                        mean_f1_micro: score - 0.2,
                        std_f1_micro: 0.01,
                        mean_f1_macro: score - 0.25,
                        std_f1_macro: 0.01,
                    });
                }
            }
        }
        rows
    }

    #[test]
    fn fig5_counts_types_times_rates_rows_per_metric() {
        let dir = tempfile::tempdir().unwrap();
        let agg = demo_aggregate();
        emit_plot_data(&agg, TrainMethod::Bce, dir.path()).unwrap();
        let fig5 = fs::read_to_string(dir.path().join("fig5.csv")).unwrap();
        let rows: Vec<&str> = fig5.lines().skip(1).collect();
        // 2 metrics × 2 types × 3 rates.
        assert_eq!(rows.len(), 2 * 2 * 3);
        assert!(rows.iter().all(|r| !r.contains("sat")), "baseline only");
    }

    #[test]
    fn fig6_map_micro_values_match_fig5_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let agg = demo_aggregate();
        emit_plot_data(&agg, TrainMethod::Bce, dir.path()).unwrap();
        let pick = |file: &str| -> Vec<String> {
            fs::read_to_string(dir.path().join(file))
                .unwrap()
                .lines()
                .filter(|l| l.starts_with("map_micro,"))
                .map(String::from)
                .collect()
        };
        assert_eq!(pick("fig5.csv"), pick("fig6.csv"));
    }

    #[test]
    fn fig7_rate_zero_drop_is_zero_and_drops_are_differences() {
        let dir = tempfile::tempdir().unwrap();
        let agg = demo_aggregate();
        emit_plot_data(&agg, TrainMethod::Bce, dir.path()).unwrap();
        let fig7 = fs::read_to_string(dir.path().join("fig7.csv")).unwrap();
        for line in fig7.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            let rate: f64 = fields[3].parse().unwrap();
            let drop: f64 = fields[4].parse().unwrap();
            if rate == 0.0 {
                assert_eq!(drop, 0.0, "self-difference must vanish: {line}");
            } else {
                assert!((drop - (-0.1 * (rate / 0.3_f64).round())).abs() < 1e-9
                        || fields[0] == "map_macro",
                    "drop should reflect the constructed decline: {line}");
            }
        }
        // 2 metrics × 2 methods × 2 types × 3 rates rows.
        assert_eq!(fig7.lines().count() - 1, 2 * 2 * 2 * 3);
    }

    #[test]
    fn fig7_missing_rate_zero_is_a_named_error() {
        let dir = tempfile::tempdir().unwrap();
        let agg: Vec<AggregateRow> = demo_aggregate()
            .into_iter()
            .filter(|r| r.noise_rate != 0.0)
            .collect();
        let err = emit_plot_data(&agg, TrainMethod::Bce, dir.path()).unwrap_err();
        match err {
            Error::MissingRateZero { method, noise_type } => {
                assert_eq!(method, "bce");
                assert_eq!(noise_type, "additive");
            }
            other => panic!("wrong error: {other}"),
        }
    }

    // ------------------------------------------------------------------
    // Atomic writes
    // ------------------------------------------------------------------

    #[test]
    fn atomic_write_creates_and_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("file.txt");
        write_atomic(&path, "first").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "first");
        write_atomic(&path, "second").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
        assert!(
            !path.with_file_name("file.txt.tmp").exists(),
            "temp file must not linger"
        );
    }

    #[test]
    fn run_files_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let result = RunResult {
            method: TrainMethod::JoCor,
            noise_type: NoiseType::Mixed,
            noise_rate: 0.3,
            seed: 2,
            best_map_micro: 0.912345678901234,
            best_map_macro: 0.87,
            f1_micro_at_best: 0.66,
            f1_macro_at_best: 0.55,
            best_epoch: 17,
            final_train_loss: 0.043,
        };
        save_run_file(dir.path(), &result).unwrap();
        let key = RunKey {
            method: TrainMethod::JoCor,
            noise_type: NoiseType::Mixed,
            rate: 0.3,
            seed: 2,
        };
        let loaded = load_run_file(dir.path(), &key).unwrap();
        assert_eq!(loaded, result, "round trip must preserve every bit");
        // Wrong key: not reused.
        let other = RunKey { seed: 3, ..key };
        assert!(load_run_file(dir.path(), &other).is_none());
    }
}
