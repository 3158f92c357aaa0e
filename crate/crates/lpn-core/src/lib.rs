//! Probabilistic MLPs for tabular regression that carry a diagonal Gaussian
//! through every layer, plus the machinery the accompanying experiments need:
//!
//! * [`gauss`] — moment-matching filters: dense, relu, leaky-relu, and dropout
//!   layers applied to per-unit mean/variance pairs.
//! * [`graph`] — a scalar computation tape with reverse-mode differentiation.
//!   Backward rules are themselves tape expressions, so gradients of gradients
//!   work (exactly once; third-order requests are rejected).
//! * [`model`] — network assembly: configuration, Glorot initialization, the
//!   probabilistic and deterministic forward passes, a hand-derived vectorized
//!   backward pass for the hot training loop, and tape builders that express
//!   the same network on a [`graph::Tape`] for anything needing higher-order
//!   or independently-checked derivatives.
//! * [`objective`] — the heteroscedastic regression loss, the three relevance
//!   scores (probabilistic, gradient-squared, input-scaled), and the
//!   relevance-entropy penalty with its regularized combination.
//! * [`train`] — Adam, the two-phase training loop, R²/RMSE metrics, and
//!   k-fold cross-validation.
//! * [`gap`] — KL-driven calibration of per-feature input variances against
//!   inflated predictive-variance targets, and the per-feature gap score
//!   (area under the calibrated σ̂ curve).
//! * [`data`] — in-memory dataset container, standardization, deterministic
//!   shuffled splits, and small synthetic generators used by tests and the
//!   self-check machinery.
//!
//! The crate is `no_std`-compatible (`default-features = false`); it then
//! depends only on `alloc` and routes float math through `libm`. File I/O,
//! serialization formats, and the CLI live in the companion crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod data;
pub mod gap;
pub mod gauss;
pub mod graph;
pub mod model;
pub mod objective;
pub mod train;

mod fmath;

pub use data::{Dataset, Standardization};
pub use gap::{GapConfig, GapProfile};
pub use gauss::GaussianTensor;
pub use graph::{NodeId, Tape};
pub use model::{NetworkConfig, Parameters, PredictiveDistribution};
pub use objective::{RelevanceMethod, RelevanceVector};
pub use train::{TrainConfig, TrainReport};
