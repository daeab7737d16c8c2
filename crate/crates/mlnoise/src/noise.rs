//! Class-wise label-noise injection.
//!
//! Noise is anchored to each class's count of PRESENT labels in the original
//! matrix: at rate r, class c plans `k_c = round(r * P_c)` flips (half away
//! from zero). Additive noise turns k_c absent labels present (0 -> 1),
//! subtractive turns k_c present labels absent (1 -> 0), and mixed applies
//! both directions with the same per-class k_c, so the expected class
//! distribution of present labels is preserved. Flip positions are sampled
//! uniformly without replacement from the eligible pool of the ORIGINAL
//! matrix, which makes the two directions of mixed noise non-overlapping by
//! construction.
//!
//! When a class lacks enough absent labels for the additive side, the flip
//! count is clamped to the pool size and the class index is recorded in the
//! report rather than silently ignored.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::LabelMatrix;
use crate::error::{Error, Result};

/// Direction of the injected label corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseType {
    /// Absent labels are marked present (false positives).
    Additive,
    /// Present labels are marked absent (missing labels).
    Subtractive,
    /// Both directions at the same per-class count.
    Mixed,
}

impl NoiseType {
    pub const ALL: [NoiseType; 3] = [NoiseType::Additive, NoiseType::Subtractive, NoiseType::Mixed];

    /// Stable small integer id, used only for seed derivation.
    pub fn stream_id(self) -> u64 {
        match self {
            NoiseType::Additive => 0,
            NoiseType::Subtractive => 1,
            NoiseType::Mixed => 2,
        }
    }
}

impl fmt::Display for NoiseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NoiseType::Additive => "additive",
            NoiseType::Subtractive => "subtractive",
            NoiseType::Mixed => "mixed",
        };
        f.write_str(s)
    }
}

impl FromStr for NoiseType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(NoiseType::Additive),
            "subtractive" => Ok(NoiseType::Subtractive),
            "mixed" => Ok(NoiseType::Mixed),
            other => Err(Error::InvalidConfig(format!(
                "unknown noise type {other:?}; expected additive, subtractive, or mixed"
            ))),
        }
    }
}

/// Full description of one injection: what to corrupt and with which stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub noise_type: NoiseType,
    /// Fraction of each class's present labels to flip, in [0, 1].
    pub rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) || self.rate.is_nan() {
            return Err(Error::InvalidConfig(format!(
                "noise rate must lie in [0, 1]; got {}",
                self.rate
            )));
        }
        Ok(())
    }
}

/// Exact accounting of what an injection did, per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseReport {
    /// Planned flips per class: `round(rate * present_count)`.
    pub planned: Vec<usize>,
    /// 0 -> 1 flips actually performed per class.
    pub performed_add: Vec<usize>,
    /// 1 -> 0 flips actually performed per class.
    pub performed_sub: Vec<usize>,
    /// Classes whose additive side was clamped by an exhausted absent pool.
    pub clamped_classes: Vec<usize>,
}

impl NoiseReport {
    pub fn n_classes(&self) -> usize {
        self.planned.len()
    }

    pub fn total_flips(&self) -> usize {
        self.performed_add.iter().sum::<usize>() + self.performed_sub.iter().sum::<usize>()
    }
}

/// Number of present labels per class (column sums).
pub fn class_present_counts(labels: &LabelMatrix) -> Vec<usize> {
    (0..labels.n_classes())
        .map(|c| {
            labels
                .array()
                .column(c)
                .iter()
                .map(|&v| usize::from(v))
                .sum()
        })
        .collect()
}

/// Planned flip count for one class: `rate * present_count`, rounded half
/// away from zero.
pub fn planned_flips(present_count: usize, rate: f64) -> usize {
    (rate * present_count as f64).round() as usize
}

/// Inject label noise as described by the given `NoiseSpec`, returning the
/// corrupted copy and a
/// per-class report. The input matrix is never modified; all flip counts are
/// computed against it, so the subtractive and additive sides of mixed noise
/// see identical per-class plans.
///
/// Randomness: one stream seeded from `spec.seed`, consumed class by class in
/// ascending class order, subtractive picks before additive picks within a
/// class. Identical inputs therefore reproduce identical outputs bit for bit.
pub fn inject_noise(labels: &LabelMatrix, spec: &NoiseSpec) -> Result<(LabelMatrix, NoiseReport)> {
    spec.validate()?;
    let n = labels.n_examples();
    let c = labels.n_classes();
    let present_counts = class_present_counts(labels);

    let mut out = labels.array().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut planned = Vec::with_capacity(c);
    let mut performed_add = vec![0usize; c];
    let mut performed_sub = vec![0usize; c];
    let mut clamped_classes = Vec::new();

    let do_sub = matches!(spec.noise_type, NoiseType::Subtractive | NoiseType::Mixed);
    let do_add = matches!(spec.noise_type, NoiseType::Additive | NoiseType::Mixed);

    for class in 0..c {
        let k = planned_flips(present_counts[class], spec.rate);
        planned.push(k);
        if k == 0 {
            continue;
        }

        // Eligibility pools come from the ORIGINAL matrix, so mixed noise
        // cannot re-flip a label it just changed.
        let mut present_rows = Vec::new();
        let mut absent_rows = Vec::new();
        for row in 0..n {
            if labels.array()[(row, class)] == 1 {
                present_rows.push(row);
            } else {
                absent_rows.push(row);
            }
        }

        if do_sub {
            // k <= P_c always holds for rate <= 1, so no clamp is needed here.
            let picks = rand::seq::index::sample(&mut rng, present_rows.len(), k);
            for idx in picks.iter() {
                out[(present_rows[idx], class)] = 0;
            }
            performed_sub[class] = k;
        }
        if do_add {
            let take = k.min(absent_rows.len());
            if take < k {
                clamped_classes.push(class);
            }
            let picks = rand::seq::index::sample(&mut rng, absent_rows.len(), take);
            for idx in picks.iter() {
                out[(absent_rows[idx], class)] = 1;
            }
            performed_add[class] = take;
        }
    }

    Ok((
        LabelMatrix::new(out)?,
        NoiseReport {
            planned,
            performed_add,
            performed_sub,
            clamped_classes,
        },
    ))
}

/// Write a per-class report as CSV with a header row:
/// `class_index,planned,performed_add,performed_sub,clamped`.
pub fn write_noise_report_csv(path: &Path, report: &NoiseReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let wrap = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    w.write_record(["class_index", "planned", "performed_add", "performed_sub", "clamped"])
        .map_err(wrap)?;
    for class in 0..report.n_classes() {
        let clamped = u8::from(report.clamped_classes.contains(&class));
        w.write_record([
            class.to_string(),
            report.planned[class].to_string(),
            report.performed_add[class].to_string(),
            report.performed_sub[class].to_string(),
            clamped.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::IoAt {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

// ======================================================================
