//! Anomaly detection on pooled deep-feature vectors.
//!
//! Normal training samples of each network level are modelled by a
//! multivariate Gaussian with a Ledoit–Wolf shrunk covariance. Samples are
//! scored by their Mahalanobis distance to that Gaussian, optionally after a
//! PCA / negated-PCA projection, and per-level scores are summed with equal
//! weights. Because squared Mahalanobis distances of Gaussian data follow a
//! chi-square law, a decision threshold can be derived from a target false
//! positive rate without any validation data.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod feature_store;
pub mod gaussian;
pub mod io;
pub mod linalg;
pub mod model_store;
pub mod par;
pub mod rng;
pub mod scoring;
pub mod specfun;
pub mod spectral;

pub use error::{Error, ErrorKind, Result};
pub use par::Exec;
