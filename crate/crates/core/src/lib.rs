//! Benchmark toolkit for ultrasound-based static hand-pose recognition.
//!
//! The crate covers the whole path from raw multi-channel RF recordings to a
//! benchmark report:
//!
//! - [`signal`]: RF preprocessing into the two network input modalities
//!   (A-mode US and Envelope(RF)).
//! - [`autodiff`]: a small dense-tensor engine with reverse-mode autodiff.
//! - [`models`]: declarative 1D-CNN and ViT classifiers built on the engine.
//! - [`train`]: Adam, step/exponential learning-rate schedules, training loop
//!   and classification accuracy.
//! - [`hpo`]: Tree-structured Parzen Estimator and random-search baselines.
//! - [`bench`]: dataset ingestion, synthetic data, session splits, the
//!   intra-session benchmark grid and report rendering.
//!
//! Data-parallel loops (per-frame preprocessing, batched evaluation, grid
//! cells, Monte-Carlo sweeps) go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise. Results are
//! identical either way.

pub mod autodiff;
pub mod bench;
pub mod hpo;
pub mod models;
pub mod par;
pub mod rng;
pub mod signal;
pub mod train;

pub use autodiff::{Tape, Tensor, TensorError, Var};
pub use par::Execution;
