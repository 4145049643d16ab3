//! Softmax classifiers, their cross-entropy loss and gradients, and the
//! Lipschitz bounds that enter the robust risk.

mod io;
mod lipschitz;
mod mlp;
mod softmax;

use serde::{Deserialize, Serialize};
use std::str::FromStr;

pub use io::{read_model, write_model, ModelFile};
pub use lipschitz::{
    ce_lipschitz_bound, empirical_lipschitz, feature_lipschitz_bound, logit_loss_lipschitz,
    network_lipschitz_bound, slice_lipschitz, BoundMode, LipschitzBounds,
};
pub use mlp::{mlp_backprop, mlp_forward, Forward, Layer, Mlp};
pub use softmax::{log_sum_exp, softmax, softmax_ce_loss, LinearSoftmax};

use crate::error::{Error, Result};

/// Elementwise activation; every supported activation is 1-Lipschitz.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative at the pre-activation `z`; the ReLU kink takes slope 0.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }

    pub fn lip_bound(self) -> f64 {
        1.0
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

/// Loss value with gradients in the input and in the flattened parameters.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_params: Vec<f64>,
}

/// A model with a per-point loss `ℓ_f(x, y)` that can be differentiated in `x`.
pub trait Classifier {
    fn input_dim(&self) -> usize;
    fn label_count(&self) -> usize;
    fn loss(&self, x: &[f64], y: usize) -> Result<f64>;
    fn loss_grad_x(&self, x: &[f64], y: usize) -> Result<(f64, Vec<f64>)>;
    /// `ℓ_f(x, y')` for every label `y'`.
    fn losses_all_labels(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn predict(&self, x: &[f64]) -> Result<usize> {
        let losses = self.losses_all_labels(x)?;
        Ok(losses
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |(bi, bv), (i, v)| if *v < bv { (i, *v) } else { (bi, bv) },
            )
            .0)
    }
}

/// Cross-entropy of every label from a logit vector: `lse(z) − z_y`.
pub(crate) fn ce_from_logits(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|z| lse - z).collect()
}
