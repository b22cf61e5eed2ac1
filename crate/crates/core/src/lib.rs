//! Robust kernel classification with jointly learned anomaly indicators.
//!
//! The crate trains a Gaussian-process large-margin classifier whose training
//! samples carry latent nominal/anomalous indicators, regularized by a
//! bipartite k-NN entropy criterion. Alongside the trainer it ships the k-NN
//! anomaly machinery, an exhaustive small-instance posterior oracle, SVM
//! baselines, a ring-anomaly data generator and evaluation metrics.

// `!(x > 0.0)` rejects NaN on purpose; indexed loops mirror the formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gem;
pub mod gemmed;
pub mod kernels;
pub mod model;
pub mod oracle;
pub mod synthdata;

pub use data::{Label, LabeledDataset};
pub use error::{Error, Result};
pub use gemmed::{train, DualState, HyperParams, TrainedModel};
pub use kernels::KernelSpec;
