//! Multi-label classification under synthetic label noise.
//!
//! The crate provides, end to end: a synthetic multi-label dataset generator
//! ([`data`]), class-wise additive/subtractive/mixed label-noise injection
//! with exact flip accounting ([`noise`]), a small hand-written MLP with
//! AdamW ([`nn`]), noise-robust training objectives ([`objectives`]),
//! ranking-based evaluation metrics ([`metrics`]), and a seeded experiment
//! grid that writes plot-ready CSVs ([`harness`]).

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod objectives;
pub mod seed;

pub use error::{Error, Result};
