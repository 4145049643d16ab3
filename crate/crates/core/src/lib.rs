//! Distributionally robust risk bounds for softmax classifiers and networks
//! over Wasserstein-type balls, with brute-force oracles to check them.
//!
//! - [`numerics`]: dense linear algebra, norms, power iteration, simplex LP.
//! - [`measures`]: discrete measures, the κ-product metric, optimal transport.
//! - [`models`]: linear softmax and MLP classifiers with Lipschitz bounds.
//! - [`robust`]: the dual robust program, LP oracles and certificates.
//! - [`adversarial`]: norm-bounded attacks and the adversarial-risk bound.
//! - [`train`]: Lipschitz-penalised training.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod data;
mod error;
pub mod measures;
pub mod models;
pub mod numerics;
pub mod rng;
pub mod robust;
pub mod train;
pub mod verdict;

pub use error::{Error, Result};
pub use measures::{DiscreteMeasure, LabeledPoint, MetricSpec, PointSet};
pub use models::{BoundMode, Classifier, LinearSoftmax, Mlp};
pub use numerics::{Matrix, NormTag, Vector};
pub use robust::{RobustCertificate, RobustInstance};
pub use verdict::Verdict;
