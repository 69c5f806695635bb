//! Time-to-injury forecasting from longitudinal athlete monitoring data.
//!
//! The crate covers the whole path from raw monitoring exports to explained
//! risk estimates:
//!
//! - [`ingest`] parses monitoring and injury CSV files and drops implausible rows.
//! - [`features`] builds a per-player daily [`FeaturePanel`] with derived load metrics.
//! - [`impute`] fills gaps (player median, relative standing, linear interpolation).
//! - [`cohort`] turns a panel into survival or binary samples and splits them.
//! - [`deephit`] is a discrete-time survival network with hand-written gradients.
//! - [`baselines`] holds logistic regression, random forest and boosted trees.
//! - [`metrics`] computes concordance, binary metrics and leave-one-player-out reports.
//! - [`explain`] attributes risk scores to features with Shapley values.
//! - [`synth`] generates cohorts with a known injury hazard.
//! - [`pipeline`] wires the stages together.

pub mod baselines;
pub mod cohort;
pub mod deephit;
mod error;
pub mod explain;
pub mod features;
pub mod impute;
pub mod ingest;
pub mod metrics;
pub mod panel;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
pub use panel::FeaturePanel;
