use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::linalg::Matrix;
use super::power::{power_iteration, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::error::{Error, Result};

/// The supported vector norms on finite-dimensional spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormTag {
    L1,
    L2,
    Linf,
}

impl NormTag {
    /// The norm of the continuous dual space.
    pub fn dual(self) -> NormTag {
        match self {
            NormTag::L1 => NormTag::Linf,
            NormTag::L2 => NormTag::L2,
            NormTag::Linf => NormTag::L1,
        }
    }

    /// Norm of a slice; the empty slice has norm zero. Use [`norm`] for the
    /// checked entry point.
    pub fn eval(self, v: &[f64]) -> f64 {
        match self {
            NormTag::L1 => v.iter().map(|x| x.abs()).sum(),
            NormTag::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormTag::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormTag::L1 => "l1",
            NormTag::L2 => "l2",
            NormTag::Linf => "linf",
        }
    }
}

impl fmt::Display for NormTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(NormTag::L1),
            "l2" => Ok(NormTag::L2),
            "linf" | "l_inf" | "inf" => Ok(NormTag::Linf),
            other => Err(Error::invalid(format!("unknown norm tag '{other}'"))),
        }
    }
}

pub fn norm(v: &[f64], tag: NormTag) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("norm of an empty vector"));
    }
    Ok(tag.eval(v))
}

/// Induced operator norm `sup_{‖x‖ = 1} ‖W x‖`.
///
/// L1 is the maximum absolute column sum, LINF the maximum absolute row sum
/// and L2 the largest singular value (power iteration on `WᵀW`). Mixed
/// input/output norms are rejected.
pub fn operator_norm(w: &Matrix, input: NormTag, output: NormTag) -> Result<f64> {
    if input != output {
        return Err(Error::UnsupportedNorm { input, output });
    }
    Ok(match input {
        NormTag::L1 => (0..w.cols())
            .map(|j| (0..w.rows()).map(|i| w[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormTag::Linf => (0..w.rows())
            .map(|i| NormTag::L1.eval(w.row(i)))
            .fold(0.0, f64::max),
        NormTag::L2 => power_iteration(w, DEFAULT_MAX_ITERS, DEFAULT_TOL)?.sigma,
    })
}

/// Shorthand for `operator_norm(w, tag, tag)`.
pub fn induced_norm(w: &Matrix, tag: NormTag) -> Result<f64> {
    operator_norm(w, tag, tag)
}
