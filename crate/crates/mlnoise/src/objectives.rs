//! Training objectives for multi-label classification under label noise.
//!
//! Four methods share one optimization loop:
//!
//! * `bce` — plain binary cross-entropy against the observed labels,
//!   averaged over examples (summed over classes).
//! * `sat` — self-adaptive training: trains against a per-example target
//!   matrix that starts as the observed labels and, after a warm-up, is
//!   blended toward the model's own predictions
//!   (`T <- alpha * T + (1 - alpha) * p`).
//! * `elr` — early-learning regularization: BCE plus
//!   `(lambda / n) * sum(log(1 - p * t))`, where `t` is an exponential
//!   moving average of past predictions (or, in an ablation mode, the
//!   observed labels).
//! * `jocor` — two networks trained jointly on per-label losses
//!   `(1 - lambda_j) * (bce_f + bce_g) + lambda_j * sym_kl(p_f, p_g)`,
//!   keeping only the smallest-loss fraction of labels each batch; the kept
//!   fraction shrinks along a forget-rate ramp.
//!
//! Every objective returns its scalar loss together with the exact gradient
//! with respect to the score matrix, so `nn::backward` can finish the chain
//! rule. Degeneracy guarantees connect the methods: SAT that never leaves
//! warm-up, JoCoR with `keep_fraction = 1` and `lambda_j = 0`, and ELR with
//! `lambda = 0` all reproduce the BCE trajectory exactly (the first two bit
//! for bit, since batch order and initialization depend only on the seed,
//! never the method).

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::data::{FeatureMatrix, LabelMatrix, ScoreMatrix};
use crate::error::{Error, Result};
use crate::nn::{adamw_step, backward, forward, init_params, lr_at_epoch, AdamWState, MlpParams, TrainConfig};
use crate::seed;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside every
/// log so losses and gradients stay finite at saturated scores.
pub const PROB_CLAMP: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

// ======================================================================
// Binary cross-entropy
// ======================================================================

/// Multi-label BCE: `-(1/n) * sum_i sum_c [t ln p + (1-t) ln(1-p)]` with n =
/// number of examples (class terms are summed, not averaged). Targets may be
/// soft (anywhere in [0, 1]). Returns the loss and dLoss/dScores.
pub fn bce_loss(scores: &ScoreMatrix, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let s = scores.array();
    if s.dim() != targets.dim() {
        return Err(Error::ShapeMismatch {
            context: "bce_loss",
            expected: format!("{:?} targets", s.dim()),
            actual: format!("{:?}", targets.dim()),
        });
    }
    let n = s.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros(s.raw_dim());
    for ((idx, &p_raw), &t) in s.indexed_iter().zip(targets.iter()) {
        let p = clamp_prob(p_raw);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        grad[idx] = -(t / p - (1.0 - t) / (1.0 - p)) / n;
    }
    Ok((loss / n, grad))
}

// ======================================================================
// Self-adaptive training (label refurbishment)
// ======================================================================

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SatConfig {
    /// Momentum of the target blend; higher keeps targets closer to the
    /// observed labels.
    pub alpha: f64,
    /// Number of initial epochs trained purely on the observed labels.
    pub warmup_epochs: usize,
}

impl Default for SatConfig {
    fn default() -> Self {
        Self { alpha: 0.9, warmup_epochs: 5 }
    }
}

impl SatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "sat alpha must lie in [0, 1]; got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Per-example soft targets, one row per training example.
#[derive(Debug, Clone, PartialEq)]
pub struct SatState {
    pub targets: Array2<f64>,
}

impl SatState {
    /// Targets start exactly at the observed labels.
    pub fn from_labels(observed: &LabelMatrix) -> Self {
        Self { targets: observed.to_f64() }
    }
}

/// Blend the stored targets of the given rows toward the current predictions:
/// `T_i <- alpha * T_i + (1 - alpha) * p_i`. Call once per row per epoch,
/// after the warm-up.
pub fn sat_update_targets(
    state: &mut SatState,
    scores: &ScoreMatrix,
    row_indices: &[usize],
    alpha: f64,
) {
    let s = scores.array();
    debug_assert_eq!(s.nrows(), row_indices.len());
    for (batch_row, &row) in row_indices.iter().enumerate() {
        for c in 0..s.ncols() {
            let t = state.targets[(row, c)];
            state.targets[(row, c)] = alpha * t + (1.0 - alpha) * s[(batch_row, c)];
        }
    }
}

/// BCE against the refurbished targets of the given rows.
pub fn sat_loss(
    scores: &ScoreMatrix,
    state: &SatState,
    row_indices: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let targets = state.targets.select(ndarray::Axis(0), row_indices);
    bce_loss(scores, &targets)
}

// ======================================================================
// Early-learning regularization
// ======================================================================

/// What the ELR penalty aligns predictions with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElrTargetMode {
    /// Exponential moving average of the model's past predictions (default).
    EmaPredictions,
    /// The observed labels themselves (ablation of a literal reading of the
    /// penalty formula; amplifies observed-label gradients, including noisy
    /// ones).
    ObservedLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElrConfig {
    /// Penalty weight.
    pub lambda: f64,
    /// EMA momentum for the prediction targets.
    pub ema_beta: f64,
    pub target_mode: ElrTargetMode,
}

impl Default for ElrConfig {
    fn default() -> Self {
        Self {
            lambda: 3.0,
            ema_beta: 0.7,
            target_mode: ElrTargetMode::EmaPredictions,
        }
    }
}

impl ElrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "elr lambda must be non-negative; got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_beta) {
            return Err(Error::InvalidConfig(format!(
                "elr ema_beta must lie in [0, 1]; got {}",
                self.ema_beta
            )));
        }
        Ok(())
    }
}

/// EMA of past predictions per training example, initialized to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ElrState {
    pub ema: Array2<f64>,
}

impl ElrState {
    pub fn zeros(n_examples: usize, n_classes: usize) -> Self {
        Self { ema: Array2::zeros((n_examples, n_classes)) }
    }
}

/// Fold current predictions into the EMA targets of the given rows:
/// `t_i <- beta * t_i + (1 - beta) * p_i`.
pub fn elr_update_targets(
    state: &mut ElrState,
    scores: &ScoreMatrix,
    row_indices: &[usize],
    beta: f64,
) {
    let s = scores.array();
    debug_assert_eq!(s.nrows(), row_indices.len());
    for (batch_row, &row) in row_indices.iter().enumerate() {
        for c in 0..s.ncols() {
            let t = state.ema[(row, c)];
            state.ema[(row, c)] = beta * t + (1.0 - beta) * s[(batch_row, c)];
        }
    }
}

/// BCE on the observed labels plus the early-learning penalty
/// `(lambda / n) * sum_i sum_c log(1 - p * t)`, where `t` comes from the EMA
/// state or the observed labels depending on `target_mode`. The penalty is
/// always <= 0 and equals 0 exactly when every product `p * t` is 0; its
/// gradient `-(lambda / n) * t / (1 - p * t)` pulls predictions toward the
/// targets. `1 - p * t` is clamped below at the probability floor so the log
/// stays finite.
pub fn elr_loss(
    scores: &ScoreMatrix,
    observed: &LabelMatrix,
    state: &ElrState,
    row_indices: &[usize],
    config: &ElrConfig,
) -> Result<(f64, Array2<f64>)> {
    let s = scores.array();
    if s.nrows() != row_indices.len() || s.ncols() != observed.n_classes() {
        return Err(Error::ShapeMismatch {
            context: "elr_loss",
            expected: format!("{} rows x {} classes", row_indices.len(), observed.n_classes()),
            actual: format!("{} rows x {} classes", s.nrows(), s.ncols()),
        });
    }
    let observed_batch = observed.select_rows(row_indices).to_f64();
    let (base_loss, mut grad) = bce_loss(scores, &observed_batch)?;

    let n = s.nrows() as f64;
    let scale = config.lambda / n;
    let mut penalty = 0.0;
    for (batch_row, &row) in row_indices.iter().enumerate() {
        for c in 0..s.ncols() {
            let p = s[(batch_row, c)];
            let t = match config.target_mode {
                ElrTargetMode::EmaPredictions => state.ema[(row, c)],
                ElrTargetMode::ObservedLabels => observed_batch[(batch_row, c)],
            };
            let inner = (1.0 - p * t).max(PROB_CLAMP);
            penalty += inner.ln();
            grad[(batch_row, c)] += scale * (-t / inner);
        }
    }
    Ok((base_loss + scale * penalty, grad))
}

// ======================================================================
// JoCoR-style joint training
// ======================================================================

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JoCorConfig {
    /// Weight of the agreement (symmetric KL) term inside each label loss.
    pub lambda_j: f64,
    /// Peak forget rate; when `None`, the injected noise rate is used if
    /// known, else 0.2.
    pub tau: Option<f64>,
    /// Epochs over which the forget rate ramps linearly from 0 to tau.
    pub ramp_epochs: usize,
}

impl Default for JoCorConfig {
    fn default() -> Self {
        Self { lambda_j: 0.3, tau: None, ramp_epochs: 5 }
    }
}

/// Forget rates are capped below 1 so at least a fraction of labels always
/// survives selection.
const MAX_TAU: f64 = 0.9;

impl JoCorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_j) {
            return Err(Error::InvalidConfig(format!(
                "jocor lambda_j must lie in [0, 1]; got {}",
                self.lambda_j
            )));
        }
        if let Some(tau) = self.tau {
            if !(0.0..1.0).contains(&tau) {
                return Err(Error::InvalidConfig(format!(
                    "jocor tau must lie in [0, 1); got {tau}"
                )));
            }
        }
        Ok(())
    }

    /// Effective peak forget rate: an explicit tau wins, else the known
    /// injected noise rate, else 0.2; always capped at 0.9.
    pub fn resolved_tau(&self, known_noise_rate: Option<f64>) -> f64 {
        self.tau
            .unwrap_or_else(|| known_noise_rate.unwrap_or(0.2))
            .min(MAX_TAU)
    }
}

/// Symmetric KL divergence between Bernoulli(p) and Bernoulli(q):
/// `(p - q) * ln(p(1-q) / (q(1-p)))`. Non-negative, zero iff p == q.
/// Probabilities are clamped before the logs.
pub fn sym_kl_bernoulli(p: f64, q: f64) -> f64 {
    let p = clamp_prob(p);
    let q = clamp_prob(q);
    (p - q) * ((p * (1.0 - q)) / (q * (1.0 - p))).ln()
}

/// Partial derivative of `sym_kl_bernoulli(p, q)` with respect to p:
/// `[logit(p) - logit(q)] + (p - q) / (p (1 - p))`.
fn sym_kl_dp(p: f64, q: f64) -> f64 {
    let p = clamp_prob(p);
    let q = clamp_prob(q);
    let logit_diff = (p / (1.0 - p)).ln() - (q / (1.0 - q)).ln();
    logit_diff + (p - q) / (p * (1.0 - p))
}

/// Single-label cross-entropy term `-(y ln p + (1-y) ln(1-p))` and its
/// derivative with respect to p.
fn bce_term(p: f64, y: f64) -> (f64, f64) {
    let p = clamp_prob(p);
    let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    let grad = -(y / p - (1.0 - y) / (1.0 - p));
    (loss, grad)
}

/// Per-label joint loss matrix:
/// `(1 - lambda_j) * [bce(p_f, y) + bce(p_g, y)] + lambda_j * sym_kl(p_f, p_g)`.
pub fn jocor_label_losses(
    scores_f: &ScoreMatrix,
    scores_g: &ScoreMatrix,
    observed: &Array2<f64>,
    lambda_j: f64,
) -> Result<Array2<f64>> {
    let sf = scores_f.array();
    let sg = scores_g.array();
    if sf.dim() != sg.dim() || sf.dim() != observed.dim() {
        return Err(Error::ShapeMismatch {
            context: "jocor_label_losses",
            expected: format!("{:?} everywhere", sf.dim()),
            actual: format!("g {:?}, labels {:?}", sg.dim(), observed.dim()),
        });
    }
    let mut out = Array2::<f64>::zeros(sf.raw_dim());
    for ((idx, &pf), (&pg, &y)) in sf.indexed_iter().zip(sg.iter().zip(observed.iter())) {
        let (lf, _) = bce_term(pf, y);
        let (lg, _) = bce_term(pg, y);
        out[idx] = (1.0 - lambda_j) * (lf + lg) + lambda_j * sym_kl_bernoulli(pf, pg);
    }
    Ok(out)
}

/// Keep the `max(1, floor(keep_fraction * len))` smallest entries of the
/// loss matrix, pooled over the whole batch (not per class). Ties are broken
/// toward the lower row-major flat index, so selection is deterministic.
pub fn select_small_loss_labels(label_losses: &Array2<f64>, keep_fraction: f64) -> Array2<bool> {
    let len = label_losses.len();
    let keep = ((keep_fraction * len as f64).floor() as usize).clamp(1, len);
    let flat = label_losses.as_slice().expect("standard layout");
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| {
        flat[a]
            .partial_cmp(&flat[b])
            .expect("label losses are finite")
            .then(a.cmp(&b))
    });
    let mut mask = Array2::from_elem(label_losses.raw_dim(), false);
    let mask_flat = mask.as_slice_mut().expect("standard layout");
    for &i in order.iter().take(keep) {
        mask_flat[i] = true;
    }
    mask
}

/// Linear ramp capped at tau: `min(tau, tau * epoch / ramp_epochs)`.
/// `ramp_epochs = 0` means no ramp (tau from the start).
pub fn forget_rate(epoch: usize, tau: f64, ramp_epochs: usize) -> f64 {
    if ramp_epochs == 0 {
        return tau;
    }
    (tau * epoch as f64 / ramp_epochs as f64).min(tau)
}

/// Scalar loss over the selected labels — the selected-entry sum divided by
/// the batch size, matching BCE's per-example normalization so that keeping
/// every label with `lambda_j = 0` reproduces two independent BCE runs
/// exactly — together with the score gradients for both networks.
pub fn jocor_selected_loss(
    scores_f: &ScoreMatrix,
    scores_g: &ScoreMatrix,
    observed: &Array2<f64>,
    lambda_j: f64,
    mask: &Array2<bool>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let sf = scores_f.array();
    let sg = scores_g.array();
    if mask.dim() != sf.dim() {
        return Err(Error::ShapeMismatch {
            context: "jocor_selected_loss",
            expected: format!("{:?} mask", sf.dim()),
            actual: format!("{:?}", mask.dim()),
        });
    }
    let entries = jocor_label_losses(scores_f, scores_g, observed, lambda_j)?;
    let n = sf.nrows() as f64;
    let mut loss = 0.0;
    let mut grad_f = Array2::<f64>::zeros(sf.raw_dim());
    let mut grad_g = Array2::<f64>::zeros(sf.raw_dim());
    for (idx, &selected) in mask.indexed_iter() {
        if !selected {
            continue;
        }
        let pf = sf[idx];
        let pg = sg[idx];
        let y = observed[idx];
        loss += entries[idx];
        let (_, df_bce) = bce_term(pf, y);
        let (_, dg_bce) = bce_term(pg, y);
        grad_f[idx] = ((1.0 - lambda_j) * df_bce + lambda_j * sym_kl_dp(pf, pg)) / n;
        grad_g[idx] = ((1.0 - lambda_j) * dg_bce + lambda_j * sym_kl_dp(pg, pf)) / n;
    }
    Ok((loss / n, grad_f, grad_g))
}

// ======================================================================
// Method state and the per-epoch loop
// ======================================================================

/// Training method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMethod {
    Bce,
    Sat,
    Elr,
    JoCor,
}

impl TrainMethod {
    pub const ALL: [TrainMethod; 4] = [
        TrainMethod::Bce,
        TrainMethod::Sat,
        TrainMethod::Elr,
        TrainMethod::JoCor,
    ];

    /// Stable id used when deriving method-dependent seed streams.
    pub fn stream_id(&self) -> u64 {
        match self {
            TrainMethod::Bce => 0,
            TrainMethod::Sat => 1,
            TrainMethod::Elr => 2,
            TrainMethod::JoCor => 3,
        }
    }
}

impl fmt::Display for TrainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrainMethod::Bce => "bce",
            TrainMethod::Sat => "sat",
            TrainMethod::Elr => "elr",
            TrainMethod::JoCor => "jocor",
        };
        f.write_str(s)
    }
}

impl FromStr for TrainMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(TrainMethod::Bce),
            "sat" => Ok(TrainMethod::Sat),
            "elr" => Ok(TrainMethod::Elr),
            "jocor" => Ok(TrainMethod::JoCor),
            other => Err(Error::InvalidConfig(format!(
                "unknown method {other:?}; expected bce, sat, elr, or jocor"
            ))),
        }
    }
}

/// Hyperparameters for every method, bundled for configs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfigs {
    pub sat: SatConfig,
    pub elr: ElrConfig,
    pub jocor: JoCorConfig,
}

impl MethodConfigs {
    pub fn validate(&self) -> Result<()> {
        self.sat.validate()?;
        self.elr.validate()?;
        self.jocor.validate()
    }
}

/// One network with its optimizer state.
#[derive(Debug, Clone)]
pub struct NetState {
    pub params: MlpParams,
    pub opt: AdamWState,
}

impl NetState {
    fn init(n_features: usize, n_hidden: usize, n_classes: usize, seed: u64) -> Self {
        Self {
            params: init_params(n_features, n_hidden, n_classes, seed),
            opt: AdamWState::new(n_features, n_hidden, n_classes),
        }
    }
}

/// Everything a method owns across epochs. Single-network methods share the
/// same initialization stream, so method choice never changes the starting
/// network; JoCoR's second network draws from a separate stream.
// A handful of these exist per process, so the variant size spread is
// irrelevant and boxing would only add indirection.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum MethodState {
    Bce {
        net: NetState,
    },
    Sat {
        net: NetState,
        cfg: SatConfig,
        state: SatState,
    },
    Elr {
        net: NetState,
        cfg: ElrConfig,
        state: ElrState,
    },
    JoCor {
        net_f: NetState,
        net_g: NetState,
        lambda_j: f64,
        tau: f64,
        ramp_epochs: usize,
    },
}

impl MethodState {
    /// Build the initial state for a method. `seed` drives parameter
    /// initialization (streams 0 and, for JoCoR's second network, 1);
    /// `known_noise_rate` feeds JoCoR's default forget rate.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: TrainMethod,
        n_features: usize,
        n_hidden: usize,
        n_classes: usize,
        observed: &LabelMatrix,
        configs: &MethodConfigs,
        seed: u64,
        known_noise_rate: Option<f64>,
    ) -> Result<Self> {
        configs.validate()?;
        let primary = NetState::init(
            n_features,
            n_hidden,
            n_classes,
            seed::derive(&[seed, seed::stream::INIT, 0]),
        );
        Ok(match method {
            TrainMethod::Bce => MethodState::Bce { net: primary },
            TrainMethod::Sat => MethodState::Sat {
                net: primary,
                cfg: configs.sat,
                state: SatState::from_labels(observed),
            },
            TrainMethod::Elr => MethodState::Elr {
                net: primary,
                cfg: configs.elr,
                state: ElrState::zeros(observed.n_examples(), n_classes),
            },
            TrainMethod::JoCor => MethodState::JoCor {
                net_f: primary,
                net_g: NetState::init(
                    n_features,
                    n_hidden,
                    n_classes,
                    seed::derive(&[seed, seed::stream::INIT, 1]),
                ),
                lambda_j: configs.jocor.lambda_j,
                tau: configs.jocor.resolved_tau(known_noise_rate),
                ramp_epochs: configs.jocor.ramp_epochs,
            },
        })
    }

    pub fn method(&self) -> TrainMethod {
        match self {
            MethodState::Bce { .. } => TrainMethod::Bce,
            MethodState::Sat { .. } => TrainMethod::Sat,
            MethodState::Elr { .. } => TrainMethod::Elr,
            MethodState::JoCor { .. } => TrainMethod::JoCor,
        }
    }

    /// The network used for evaluation and checkpointing. For JoCoR this is
    /// the first network; the two play symmetric roles.
    pub fn eval_params(&self) -> &MlpParams {
        match self {
            MethodState::Bce { net }
            | MethodState::Sat { net, .. }
            | MethodState::Elr { net, .. } => &net.params,
            MethodState::JoCor { net_f, .. } => &net_f.params,
        }
    }
}

/// What one epoch produced.
#[derive(Debug, Clone)]
pub struct EpochOutcome {
    /// Batch-size-weighted mean of the batch losses.
    pub mean_loss: f64,
    /// Scalar loss of every mini-batch, in visit order.
    pub batch_losses: Vec<f64>,
}

/// Run one epoch of mini-batch training. The batch order is a seeded shuffle
/// derived only from `(train.seed, epoch)` — never from the method — so
/// different methods visit identical batches. Returns the epoch's mean
/// training loss.
pub fn train_epoch(
    state: &mut MethodState,
    features: &FeatureMatrix,
    observed: &LabelMatrix,
    train: &TrainConfig,
    epoch: usize,
) -> Result<EpochOutcome> {
    train.validate()?;
    if features.n_examples() != observed.n_examples() {
        return Err(Error::ShapeMismatch {
            context: "train_epoch",
            expected: format!("{} label rows", features.n_examples()),
            actual: format!("{}", observed.n_examples()),
        });
    }
    let n = features.n_examples();
    let lr = lr_at_epoch(train, epoch);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(&[
        train.seed,
        seed::stream::SHUFFLE,
        epoch as u64,
    ]));
    order.shuffle(&mut rng);

    let mut batch_losses = Vec::new();
    let mut weighted = 0.0;
    for batch in order.chunks(train.batch_size) {
        let x = features.select_rows(batch);
        let loss = match state {
            MethodState::Bce { net } => {
                let scores = forward(&net.params, &x)?;
                let targets = observed.select_rows(batch).to_f64();
                let (loss, dscores) = bce_loss(&scores, &targets)?;
                let grads = backward(&net.params, &x, &dscores)?;
                adamw_step(&mut net.params, &grads, &mut net.opt, lr, train.weight_decay);
                loss
            }
            MethodState::Sat { net, cfg, state } => {
                let scores = forward(&net.params, &x)?;
                let (loss, dscores) = sat_loss(&scores, state, batch)?;
                let grads = backward(&net.params, &x, &dscores)?;
                adamw_step(&mut net.params, &grads, &mut net.opt, lr, train.weight_decay);
                if epoch >= cfg.warmup_epochs {
                    sat_update_targets(state, &scores, batch, cfg.alpha);
                }
                loss
            }
            MethodState::Elr { net, cfg, state } => {
                let scores = forward(&net.params, &x)?;
                elr_update_targets(state, &scores, batch, cfg.ema_beta);
                let (loss, dscores) = elr_loss(&scores, observed, state, batch, cfg)?;
                let grads = backward(&net.params, &x, &dscores)?;
                adamw_step(&mut net.params, &grads, &mut net.opt, lr, train.weight_decay);
                loss
            }
            MethodState::JoCor {
                net_f,
                net_g,
                lambda_j,
                tau,
                ramp_epochs,
            } => {
                let scores_f = forward(&net_f.params, &x)?;
                let scores_g = forward(&net_g.params, &x)?;
                let targets = observed.select_rows(batch).to_f64();
                let entries = jocor_label_losses(&scores_f, &scores_g, &targets, *lambda_j)?;
                let keep = 1.0 - forget_rate(epoch, *tau, *ramp_epochs);
                let mask = select_small_loss_labels(&entries, keep);
                let (loss, grad_f, grad_g) =
                    jocor_selected_loss(&scores_f, &scores_g, &targets, *lambda_j, &mask)?;
                let gf = backward(&net_f.params, &x, &grad_f)?;
                let gg = backward(&net_g.params, &x, &grad_g)?;
                adamw_step(&mut net_f.params, &gf, &mut net_f.opt, lr, train.weight_decay);
                adamw_step(&mut net_g.params, &gg, &mut net_g.opt, lr, train.weight_decay);
                loss
            }
        };
        batch_losses.push(loss);
        weighted += loss * batch.len() as f64;
    }

    Ok(EpochOutcome {
        mean_loss: weighted / n as f64,
        batch_losses,
    })
}

// ======================================================================
