//! One-hidden-layer MLP with hand-written backpropagation and AdamW.
//!
//! Architecture: `scores = sigmoid(W2 * relu(W1 * x + b1) + b2)`, computed
//! batch-wise on row-major matrices. The backward pass is the exact analytic
//! gradient (including the sigmoid and relu Jacobians) of whatever scalar
//! loss produced the supplied score-gradient, which keeps the objective code
//! decoupled from the network: objectives hand back dLoss/dScores and this
//! module turns it into parameter gradients.
//!
//! `finite_diff_check` is the reference oracle used throughout the test
//! suite: central differences on every (or a seeded subsample of) parameter
//! coordinate against the analytic gradient.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::{FeatureMatrix, ScoreMatrix};
use crate::error::{Error, Result};

// ======================================================================
// Parameters
// ======================================================================

/// All parameters of the MLP. Also reused as the container for gradients and
/// Adam moment accumulators, which are shaped identically.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Hidden weights, `n_hidden x n_features`.
    pub w1: Array2<f64>,
    /// Hidden biases, `n_hidden`.
    pub b1: Array1<f64>,
    /// Output weights, `n_classes x n_hidden`.
    pub w2: Array2<f64>,
    /// Output biases, `n_classes`.
    pub b2: Array1<f64>,
}

impl MlpParams {
    pub fn zeros(n_features: usize, n_hidden: usize, n_classes: usize) -> Self {
        Self {
            w1: Array2::zeros((n_hidden, n_features)),
            b1: Array1::zeros(n_hidden),
            w2: Array2::zeros((n_classes, n_hidden)),
            b2: Array1::zeros(n_classes),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.ncols(), self.w1.nrows(), self.w2.nrows())
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Flatten in the fixed order w1 (row-major), b1, w2 (row-major), b2.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for field in self.fields() {
            out.extend_from_slice(field);
        }
        out
    }

    pub fn from_flat(
        n_features: usize,
        n_hidden: usize,
        n_classes: usize,
        flat: &[f64],
    ) -> Result<Self> {
        let expected = n_hidden * n_features + n_hidden + n_classes * n_hidden + n_classes;
        if flat.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "MlpParams::from_flat",
                expected: format!("{expected} values"),
                actual: format!("{} values", flat.len()),
            });
        }
        let mut it = flat.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        Ok(Self {
            w1: Array2::from_shape_vec((n_hidden, n_features), take(n_hidden * n_features))
                .expect("sized above"),
            b1: Array1::from_vec(take(n_hidden)),
            w2: Array2::from_shape_vec((n_classes, n_hidden), take(n_classes * n_hidden))
                .expect("sized above"),
            b2: Array1::from_vec(take(n_classes)),
        })
    }

    fn fields(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    fn fields_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Read one coordinate by flat index (order as in `to_flat`).
    pub fn get_flat(&self, index: usize) -> f64 {
        let mut i = index;
        for field in self.fields() {
            if i < field.len() {
                return field[i];
            }
            i -= field.len();
        }
        panic!("flat index {index} out of range for {} params", self.n_params());
    }

    /// Write one coordinate by flat index (order as in `to_flat`).
    pub fn set_flat(&mut self, index: usize, value: f64) {
        let n = self.n_params();
        let mut i = index;
        for field in self.fields_mut() {
            if i < field.len() {
                field[i] = value;
                return;
            }
            i -= field.len();
        }
        panic!("flat index {index} out of range for {n} params");
    }
}

/// Draw initial parameters: weights from zero-mean Gaussians with standard
/// deviation `1/sqrt(fan_in)` (fan_in = n_features for W1, n_hidden for W2),
/// biases zero. Draw order is W1 row-major then W2 row-major, so the same
/// seed always produces the same network.
pub fn init_params(n_features: usize, n_hidden: usize, n_classes: usize, seed: u64) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1_dist = Normal::new(0.0, 1.0 / (n_features as f64).sqrt()).expect("positive std");
    let w2_dist = Normal::new(0.0, 1.0 / (n_hidden as f64).sqrt()).expect("positive std");
    let w1 = Array2::from_shape_fn((n_hidden, n_features), |_| w1_dist.sample(&mut rng));
    let w2 = Array2::from_shape_fn((n_classes, n_hidden), |_| w2_dist.sample(&mut rng));
    MlpParams {
        w1,
        b1: Array1::zeros(n_hidden),
        w2,
        b2: Array1::zeros(n_classes),
    }
}

// ======================================================================
// Forward / backward
// ======================================================================

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct ForwardCache {
    pre_hidden: Array2<f64>,
    hidden: Array2<f64>,
    scores: Array2<f64>,
}

fn forward_cache(params: &MlpParams, features: &FeatureMatrix) -> Result<ForwardCache> {
    let x = features.array();
    if x.ncols() != params.w1.ncols() {
        return Err(Error::ShapeMismatch {
            context: "nn::forward",
            expected: format!("{} feature columns", params.w1.ncols()),
            actual: format!("{} feature columns", x.ncols()),
        });
    }
    let mut pre_hidden = x.dot(&params.w1.t());
    pre_hidden += &params.b1;
    let hidden = pre_hidden.mapv(|v| v.max(0.0));
    let mut logits = hidden.dot(&params.w2.t());
    logits += &params.b2;
    let scores = logits.mapv(sigmoid);
    Ok(ForwardCache {
        pre_hidden,
        hidden,
        scores,
    })
}

/// Batch forward pass producing per-class scores in (0, 1).
pub fn forward(params: &MlpParams, features: &FeatureMatrix) -> Result<ScoreMatrix> {
    ScoreMatrix::new(forward_cache(params, features)?.scores)
}

/// Exact analytic parameter gradient for the scalar loss whose score-gradient
/// is supplied. `dloss_dscores[(i, c)]` must be the partial derivative of the
/// loss with respect to `scores[(i, c)]` from a forward pass on the same
/// `params` and `features`; the sigmoid and relu Jacobians are applied here.
pub fn backward(
    params: &MlpParams,
    features: &FeatureMatrix,
    dloss_dscores: &Array2<f64>,
) -> Result<MlpParams> {
    let cache = forward_cache(params, features)?;
    if dloss_dscores.dim() != cache.scores.dim() {
        return Err(Error::ShapeMismatch {
            context: "nn::backward",
            expected: format!("{:?} score gradient", cache.scores.dim()),
            actual: format!("{:?}", dloss_dscores.dim()),
        });
    }
    let x = features.array();

    // Through the sigmoid: ds/dz = s * (1 - s).
    let dlogits = dloss_dscores * &cache.scores.mapv(|s| s * (1.0 - s));
    let gw2 = dlogits.t().dot(&cache.hidden);
    let gb2 = dlogits.sum_axis(Axis(0));

    // Through the output weights and the relu (derivative 0 at exactly 0).
    let dhidden = dlogits.dot(&params.w2);
    let dpre = &dhidden * &cache.pre_hidden.mapv(|p| if p > 0.0 { 1.0 } else { 0.0 });
    let gw1 = dpre.t().dot(x);
    let gb1 = dpre.sum_axis(Axis(0));

    Ok(MlpParams {
        w1: gw1,
        b1: gb1,
        w2: gw2,
        b2: gb2,
    })
}

// ======================================================================
// Optimizer
// ======================================================================

/// AdamW moment state. `step` counts completed updates and drives bias
/// correction.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamWState {
    pub fn new(n_features: usize, n_hidden: usize, n_classes: usize) -> Self {
        Self {
            m: MlpParams::zeros(n_features, n_hidden, n_classes),
            v: MlpParams::zeros(n_features, n_hidden, n_classes),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One AdamW update, in place. Weight decay is decoupled: every parameter is
/// scaled by `(1 - lr * weight_decay)` before the Adam term is applied, and
/// the decay never enters the moment estimates. Applied uniformly to weights
/// and biases.
pub fn adamw_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    state: &mut AdamWState,
    lr: f64,
    weight_decay: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let decay = 1.0 - lr * weight_decay;

    let mut p_fields = params.fields_mut();
    let g_fields = grads.fields();
    let mut m_fields = state.m.fields_mut();
    let mut v_fields = state.v.fields_mut();
    for f in 0..4 {
        let p = &mut p_fields[f];
        let g = g_fields[f];
        let m = &mut m_fields[f];
        let v = &mut v_fields[f];
        for i in 0..p.len() {
            p[i] *= decay;
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

// ======================================================================
// Training schedule configuration
// ======================================================================

/// Optimization schedule shared by every training method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// First epoch (0-based) at which the dropped learning rate applies.
    pub lr_drop_epoch: usize,
    /// Divisor applied to the learning rate from `lr_drop_epoch` on.
    pub lr_drop_factor: f64,
    pub weight_decay: f64,
    /// Seed for batch shuffling and parameter initialization.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_drop_epoch: 20,
            lr_drop_factor: 5.0,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "epochs and batch_size must be >= 1 (got {} and {})",
                self.epochs, self.batch_size
            )));
        }
        // `is_nan` checks make the rejection of NaN explicit.
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || self.lr_drop_factor.is_nan()
            || self.lr_drop_factor <= 0.0
        {
            return Err(Error::InvalidConfig(format!(
                "learning_rate and lr_drop_factor must be positive (got {} and {})",
                self.learning_rate, self.lr_drop_factor
            )));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be non-negative (got {})",
                self.weight_decay
            )));
        }
        if self.lr_drop_epoch > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "lr_drop_epoch ({}) must not exceed epochs ({})",
                self.lr_drop_epoch, self.epochs
            )));
        }
        Ok(())
    }
}

/// Step schedule: the base rate before `lr_drop_epoch`, the base rate divided
/// by `lr_drop_factor` from then on.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    debug_assert!(epoch < config.epochs, "epoch {epoch} outside schedule");
    if epoch < config.lr_drop_epoch {
        config.learning_rate
    } else {
        config.learning_rate / config.lr_drop_factor
    }
}

// ======================================================================
// Gradient checking
// ======================================================================

/// Coordinates above this count are checked on a seeded subsample instead of
/// exhaustively.
const FD_EXHAUSTIVE_LIMIT: usize = 10_000;
const FD_SUBSAMPLE_SEED: u64 = 0x9E37_79B9;

/// Compare an analytic gradient against central finite differences of
/// `loss_evaluator` and return the maximum relative error over the checked
/// coordinates. Relative error uses `max(|analytic|, |numeric|, 1e-8)` as the
/// denominator. All coordinates are checked up to 10,000 parameters; larger
/// networks get a seeded subsample of that size.
///
/// Step-size caveat: central differences truncate at O(step^2) and cancel at
/// O(eps/step), so very large steps (like 1e-1) report genuine-looking
/// mismatch on curved losses. Step 1e-5 is a good default for f64.
pub fn finite_diff_check(
    params: &MlpParams,
    loss_evaluator: impl Fn(&MlpParams) -> f64,
    analytic: &MlpParams,
    step: f64,
) -> f64 {
    assert!(step > 0.0, "finite-difference step must be positive");
    let n = params.n_params();
    let coords: Vec<usize> = if n <= FD_EXHAUSTIVE_LIMIT {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(FD_SUBSAMPLE_SEED);
        let mut picks: Vec<usize> =
            rand::seq::index::sample(&mut rng, n, FD_EXHAUSTIVE_LIMIT).into_vec();
        picks.sort_unstable();
        picks
    };

    let mut work = params.clone();
    let mut max_rel = 0.0f64;
    for &i in &coords {
        let orig = work.get_flat(i);
        work.set_flat(i, orig + step);
        let plus = loss_evaluator(&work);
        work.set_flat(i, orig - step);
        let minus = loss_evaluator(&work);
        work.set_flat(i, orig);
        let numeric = (plus - minus) / (2.0 * step);
        let exact = analytic.get_flat(i);
        let denom = numeric.abs().max(exact.abs()).max(1e-8);
        let rel = (numeric - exact).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}

// ======================================================================
// Checkpoints
// ======================================================================

/// Save parameters as CSV: a one-line `n_features,n_hidden,n_classes` header
/// followed by one flat parameter value per line (order as in `to_flat`).
pub fn save_checkpoint(path: &Path, params: &MlpParams) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::IoAt {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = BufWriter::new(file);
    let (d, h, c) = params.dims();
    let write = |out: &mut BufWriter<File>, s: String| -> Result<()> {
        writeln!(out, "{s}").map_err(|e| Error::IoAt {
            path: path.to_path_buf(),
            source: e,
        })
    };
    write(&mut out, format!("{d},{h},{c}"))?;
    for v in params.to_flat() {
        write(&mut out, format!("{v}"))?;
    }
    out.flush().map_err(|e| Error::IoAt {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpParams> {
    let file = File::open(path).map_err(|e| Error::IoAt {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::IoAt {
            path: path.to_path_buf(),
            source: e,
        })?
        .ok_or_else(|| Error::CsvShape {
            path: path.to_path_buf(),
            message: "empty checkpoint".into(),
        })?;
    let dims: Vec<usize> = header
        .trim()
        .split(',')
        .map(|s| {
            s.parse::<usize>().map_err(|_| Error::CsvShape {
                path: path.to_path_buf(),
                message: format!("bad dimension header {header:?}"),
            })
        })
        .collect::<Result<_>>()?;
    let [d, h, c]: [usize; 3] = dims.try_into().map_err(|_| Error::CsvShape {
        path: path.to_path_buf(),
        message: format!("dimension header {header:?} must have three entries"),
    })?;
    let mut flat = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::IoAt {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let v = line.trim().parse::<f64>().map_err(|_| Error::CsvCell {
            path: path.to_path_buf(),
            row: i + 2,
            column: 1,
            message: format!("expected a real number, got {line:?}"),
        })?;
        flat.push(v);
    }
    MlpParams::from_flat(d, h, c, &flat)
}

// ======================================================================
