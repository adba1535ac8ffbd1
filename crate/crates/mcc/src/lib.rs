//! Budget-aware multi-modal classifier chains.
//!
//! Instances are described by several feature modalities, each with an
//! extraction cost. At test time a gated recurrent cell decides, one step at
//! a time, which modality to extract next and when it is confident enough to
//! stop, so different instances pay different extraction costs. Multi-label
//! problems are handled by a classifier chain ordered by per-label Gini
//! impurity, where each chain stage sees the labels predicted by earlier
//! stages as one extra cheap modality.
//!
//! The crate is organised along the pipeline:
//!
//! - [`dataset`]: schemas, loading (CSV/ARFF), fold splits, feature scaling.
//! - [`chain`]: Gini label ordering and per-stage augmented datasets.
//! - [`cell`]: the recurrent cell with label and modality heads, with exact
//!   analytic gradients.
//! - [`training`]: losses, the KNN modality teacher, AdaDelta, and the
//!   per-stage training loop.
//! - [`inference`]: sequential extraction at test time, chain propagation,
//!   cost accounting.
//! - [`baselines`]: BR / CC / ECC over a shared logistic learner.
//! - [`metrics`]: multi-label metrics and cross-validation aggregation.
//! - [`synth`]: deterministic synthetic dataset generation.
//! - [`experiment`]: cross-validated experiment driver used by the CLI.
//!
//! All training and inference is deterministic given the configured seed.

pub mod baselines;
pub mod cell;
pub mod chain;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod metrics;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
