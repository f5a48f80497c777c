//! Sharpness-aware minimization (SAM) and its noise-explicit reweighting
//! variant (SANER) on top of a small exact-gradient MLP engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: flat-parameter fully-connected classifiers with exact
//!   forward/backward passes and clean/noisy gradient splitting.
//! - [`noise`]: synthetic Gaussian-blob datasets, label-noise injection and
//!   the `saner-ds v1` file format.
//! - [`optim`]: SGD, SAM, SANER, the alpha scheduler and the generic
//!   variant wrapper.
//! - [`diagnostics`]: group A/B/C partitioning, hybrid gradients and the
//!   clean/noise dominance statistics.
//! - [`harness`]: training loop, metrics CSV, run comparison and the
//!   key=value experiment configuration.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod model;
pub mod noise;
pub mod optim;

pub use diagnostics::{DominanceReport, DominanceSets, GroupFractions, GroupPartition, HybridKind};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, MetricsRow, RunRecord};
pub use model::{Activation, Batch, ModelSpec, ParamVector};
pub use noise::{LabeledDataset, NoiseKind, NoiseSpec};
pub use optim::{GradientBundle, Mode, OptimConfig, OptimizerState};
