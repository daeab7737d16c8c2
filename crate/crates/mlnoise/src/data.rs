//! Dataset model: validated matrix newtypes, synthetic multi-label data
//! generation, headerless CSV interchange, and seeded train/test splitting.
//!
//! All matrices are dense, row-major, one row per example. Labels are strict
//! 0/1; scores live in [0, 1]; features are finite reals. The newtypes check
//! those invariants once at the boundary so numeric code can assume them.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::seed;

// ======================================================================
// Matrix newtypes
// ======================================================================

/// Dense feature matrix, one row per example. All entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

/// Binary label matrix, one row per example, one column per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    data: Array2<u8>,
}

/// Per-example, per-class scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::ShapeMismatch {
                context: "FeatureMatrix::new",
                expected: "at least 1 row and 1 column".into(),
                actual: format!("{} x {}", data.nrows(), data.ncols()),
            });
        }
        if let Some((idx, _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "non-finite feature at row {}, column {}",
                idx.0, idx.1
            )));
        }
        Ok(Self { data })
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n_examples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.data.ncols()
    }

    /// Gather the given rows into a new matrix (panics on out-of-range index;
    /// callers pass indices they derived from this matrix's row count).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(0), rows),
        }
    }
}

impl LabelMatrix {
    pub fn new(data: Array2<u8>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::ShapeMismatch {
                context: "LabelMatrix::new",
                expected: "at least 1 row and 1 column".into(),
                actual: format!("{} x {}", data.nrows(), data.ncols()),
            });
        }
        if let Some((idx, &v)) = data.indexed_iter().find(|(_, &v)| v > 1) {
            return Err(Error::InvalidConfig(format!(
                "label entry at row {}, column {} is {v}; labels must be 0 or 1",
                idx.0, idx.1
            )));
        }
        Ok(Self { data })
    }

    pub fn array(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn n_examples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.data.ncols()
    }

    /// Labels as 0.0/1.0 reals, the form losses consume.
    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(0), rows),
        }
    }

    /// Order-sensitive FNV-1a digest of dimensions plus entries; lets tests
    /// and tools assert a label matrix was not touched.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |b: u64| {
            h ^= b;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        eat(self.data.nrows() as u64);
        eat(self.data.ncols() as u64);
        for &v in self.data.iter() {
            eat(u64::from(v));
        }
        h
    }
}

impl ScoreMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if let Some((idx, &v)) = data
            .indexed_iter()
            .find(|(_, &v)| !(0.0..=1.0).contains(&v))
        {
            return Err(Error::InvalidConfig(format!(
                "score at row {}, column {} is {v}; scores must lie in [0, 1]",
                idx.0, idx.1
            )));
        }
        Ok(Self { data })
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n_examples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.data.ncols()
    }
}

// ======================================================================
// Synthetic generation
// ======================================================================

/// Recipe for a synthetic multi-label dataset. Each class has a Gaussian
/// prototype vector; an example's features are the sum of the prototypes of
/// its present classes plus isotropic Gaussian noise.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_examples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Target expected number of present labels per example.
    pub mean_labels_per_example: f64,
    /// Standard deviation of prototype entries.
    pub prototype_scale: f64,
    /// Standard deviation of the additive feature noise.
    pub feature_noise_std: f64,
    pub seed: u64,
    /// Optional per-class presence probabilities (one per class, each in
    /// [0, 1]). When set, these are used as-is and
    /// `mean_labels_per_example` is ignored, which lets callers model skewed
    /// class frequencies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_presence: Option<Vec<f64>>,
}

impl Default for SyntheticSpec {
    /// Desk-scale defaults: large enough for trend experiments to be stable
    /// across seeds, small enough that a full grid runs in minutes on a CPU.
    fn default() -> Self {
        Self {
            n_examples: 4000,
            n_features: 32,
            n_classes: 12,
            mean_labels_per_example: 1.5,
            prototype_scale: 1.0,
            // Calibrated so a 64-unit hidden layer trained with the baseline
            // objective clears 0.9 clean test mAP-micro within 30 epochs while
            // heavy label corruption still visibly degrades it.
            feature_noise_std: 1.5,
            seed: 0,
            class_presence: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_examples == 0 || self.n_features == 0 || self.n_classes == 0 {
            return Err(Error::InvalidConfig(format!(
                "synthetic spec dimensions must be >= 1 (got {} examples, {} features, {} classes)",
                self.n_examples, self.n_features, self.n_classes
            )));
        }
        if !(self.mean_labels_per_example > 0.0
            && self.mean_labels_per_example <= self.n_classes as f64)
        {
            return Err(Error::InvalidConfig(format!(
                "mean_labels_per_example must lie in (0, n_classes]; got {} with {} classes",
                self.mean_labels_per_example, self.n_classes
            )));
        }
        // `is_nan` checks make the rejection of NaN explicit.
        if self.prototype_scale.is_nan()
            || self.prototype_scale <= 0.0
            || self.feature_noise_std.is_nan()
            || self.feature_noise_std <= 0.0
        {
            return Err(Error::InvalidConfig(format!(
                "prototype_scale and feature_noise_std must be positive (got {} and {})",
                self.prototype_scale, self.feature_noise_std
            )));
        }
        if let Some(probs) = &self.class_presence {
            if probs.len() != self.n_classes {
                return Err(Error::InvalidConfig(format!(
                    "class_presence has {} entries but there are {} classes",
                    probs.len(),
                    self.n_classes
                )));
            }
            if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::InvalidConfig(format!(
                    "class_presence entries must lie in [0, 1]; got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Solve for the per-class base presence probability q such that the expected
/// row sum AFTER the redraw-once-on-empty policy equals `mean`. Rows drawing
/// an empty label set are redrawn once, which lifts the expected row sum of a
/// raw Bernoulli draw by a factor 1 + (1-q)^C; using mean/C directly would
/// overshoot the requested density by ~20% at sparse settings, so the base
/// probability is calibrated by bisection on the monotone map
/// q -> C*q*(1 + (1-q)^C).
fn calibrated_presence_probability(mean: f64, n_classes: usize) -> f64 {
    let c = n_classes as f64;
    if mean >= c {
        return 1.0;
    }
    let expected = |q: f64| c * q * (1.0 + (1.0 - q).powi(n_classes as i32));
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generate a synthetic dataset. Pure function of the given `SyntheticSpec`:
/// the same settings always yield bit-identical matrices.
///
/// Draw order (fixed for reproducibility): class prototypes row-major, then
/// per example the label set (twice if the first draw is empty), then the
/// feature noise vector.
pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<(FeatureMatrix, LabelMatrix)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let proto_dist = Normal::new(0.0, spec.prototype_scale).expect("validated scale");
    let noise_dist = Normal::new(0.0, spec.feature_noise_std).expect("validated std");

    let c = spec.n_classes;
    let d = spec.n_features;
    let n = spec.n_examples;

    let prototypes =
        Array2::from_shape_fn((c, d), |_| proto_dist.sample(&mut rng));

    let presence: Vec<f64> = match &spec.class_presence {
        Some(probs) => probs.clone(),
        None => {
            let q = calibrated_presence_probability(spec.mean_labels_per_example, c);
            vec![q; c]
        }
    };

    let mut labels = Array2::<u8>::zeros((n, c));
    let mut features = Array2::<f64>::zeros((n, d));
    let mut row_buf = vec![0u8; c];

    for i in 0..n {
        let draw_row = |rng: &mut ChaCha8Rng, buf: &mut [u8]| -> bool {
            let mut any = false;
            for (k, b) in buf.iter_mut().enumerate() {
                let present = rng.gen::<f64>() < presence[k];
                *b = u8::from(present);
                any |= present;
            }
            any
        };
        // Empty label sets are redrawn once, then allowed.
        if !draw_row(&mut rng, &mut row_buf) {
            draw_row(&mut rng, &mut row_buf);
        }
        for k in 0..c {
            labels[(i, k)] = row_buf[k];
        }
        for j in 0..d {
            let mut v = noise_dist.sample(&mut rng);
            for k in 0..c {
                if row_buf[k] == 1 {
                    v += prototypes[(k, j)];
                }
            }
            features[(i, j)] = v;
        }
    }

    Ok((FeatureMatrix::new(features)?, LabelMatrix::new(labels)?))
}

// ======================================================================
// Train/test split
// ======================================================================

/// Row-disjoint split of one dataset into train and test parts.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train_features: FeatureMatrix,
    pub train_labels: LabelMatrix,
    pub test_features: FeatureMatrix,
    pub test_labels: LabelMatrix,
}

/// Partition rows into train/test by a seeded permutation. The test side gets
/// `round(test_fraction * n)` rows (half away from zero); rows keep the
/// permuted order within each side.
pub fn train_test_split(
    features: &FeatureMatrix,
    labels: &LabelMatrix,
    test_fraction: f64,
    split_seed: u64,
) -> Result<DatasetSplit> {
    if features.n_examples() != labels.n_examples() {
        return Err(Error::ShapeMismatch {
            context: "train_test_split",
            expected: format!("{} label rows", features.n_examples()),
            actual: format!("{} label rows", labels.n_examples()),
        });
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must lie strictly between 0 and 1; got {test_fraction}"
        )));
    }
    let n = features.n_examples();
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidConfig(format!(
            "test_fraction {test_fraction} leaves an empty split for {n} examples \
             ({n_test} test rows)"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(&[split_seed, seed::stream::SPLIT]));
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);

    let (test_rows, train_rows) = order.split_at(n_test);
    Ok(DatasetSplit {
        train_features: features.select_rows(train_rows),
        train_labels: labels.select_rows(train_rows),
        test_features: features.select_rows(test_rows),
        test_labels: labels.select_rows(test_rows),
    })
}

// ======================================================================
// CSV interchange
// ======================================================================
//
// Feature and label files are headerless CSV, one row per example. Label
// cells must be exactly "0" or "1". Readers accept LF or CRLF; writers emit
// LF. Floats are written in shortest round-trip form so write -> read is
// lossless.

pub fn read_features_csv(path: &Path) -> Result<FeatureMatrix> {
    let rows = read_numeric_rows(path, |cell, row, col| {
        cell.parse::<f64>().map_err(|e| Error::CsvCell {
            path: path.to_path_buf(),
            row,
            column: col,
            message: format!("expected a real number, got {cell:?} ({e})"),
        })
    })?;
    FeatureMatrix::new(rows)
}

pub fn read_labels_csv(path: &Path) -> Result<LabelMatrix> {
    let rows = read_numeric_rows(path, |cell, row, col| match cell {
        "0" => Ok(0u8),
        "1" => Ok(1u8),
        other => Err(Error::CsvCell {
            path: path.to_path_buf(),
            row,
            column: col,
            message: format!("label cells must be exactly \"0\" or \"1\", got {other:?}"),
        }),
    })?;
    LabelMatrix::new(rows)
}

fn read_numeric_rows<T: Clone + Default>(
    path: &Path,
    parse: impl Fn(&str, usize, usize) -> Result<T>,
) -> Result<Array2<T>> {
    let file = File::open(path).map_err(|e| Error::IoAt {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true) // width is validated manually for a better message
        .from_reader(BufReader::new(file));

    let mut values: Vec<T> = Vec::new();
    let mut width: Option<usize> = None;
    let mut n_rows = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let w = record.len();
        match width {
            None => width = Some(w),
            Some(expect) if expect != w => {
                return Err(Error::CsvShape {
                    path: path.to_path_buf(),
                    message: format!(
                        "row {} has {} cells but row 1 has {}",
                        row_idx + 1,
                        w,
                        expect
                    ),
                });
            }
            _ => {}
        }
        for (col_idx, cell) in record.iter().enumerate() {
            values.push(parse(cell, row_idx + 1, col_idx + 1)?);
        }
        n_rows += 1;
    }
    let width = width.unwrap_or(0);
    if n_rows == 0 || width == 0 {
        return Err(Error::CsvShape {
            path: path.to_path_buf(),
            message: "file contains no data".into(),
        });
    }
    Ok(Array2::from_shape_vec((n_rows, width), values).expect("row-major fill"))
}

pub fn write_features_csv(path: &Path, features: &FeatureMatrix) -> Result<()> {
    write_rows(path, features.array(), |v| format!("{v}"))
}

pub fn write_labels_csv(path: &Path, labels: &LabelMatrix) -> Result<()> {
    write_rows(path, labels.array(), |v| format!("{v}"))
}

fn write_rows<T: Copy>(
    path: &Path,
    data: &Array2<T>,
    fmt: impl Fn(T) -> String,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::IoAt {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = BufWriter::new(file);
    for row in data.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
        writeln!(out, "{}", line.join(",")).map_err(|e| Error::IoAt {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    out.flush().map_err(|e| Error::IoAt {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Load a feature/label CSV pair and check that row counts agree.
pub fn load_dataset(features_path: &Path, labels_path: &Path) -> Result<(FeatureMatrix, LabelMatrix)> {
    let features = read_features_csv(features_path)?;
    let labels = read_labels_csv(labels_path)?;
    if features.n_examples() != labels.n_examples() {
        return Err(Error::ShapeMismatch {
            context: "load_dataset",
            expected: format!("{} rows in both files", features.n_examples()),
            actual: format!(
                "{} feature rows vs {} label rows",
                features.n_examples(),
                labels.n_examples()
            ),
        });
    }
    Ok((features, labels))
}

// ======================================================================
