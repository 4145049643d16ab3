//! Grid check of the penalised supremum `sup_x Ψ(x) − γ‖x − z‖` for a convex
//! Lipschitz `Ψ`: it equals `Ψ(z)` once `γ` reaches `lip(Ψ)`, and grows
//! without bound when `γ` is below it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::NormTag;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupBranch {
    Equality,
    Growth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenalisedSupConfig {
    pub norm: NormTag,
    /// Half-width of the first box around `z`.
    pub initial_extent: f64,
    /// Number of times the box is doubled after the first.
    pub doublings: usize,
    /// Lattice points per axis; odd so that `z` is a lattice point.
    pub points_per_axis: usize,
    pub tolerance: f64,
}

impl Default for PenalisedSupConfig {
    fn default() -> Self {
        Self {
            norm: NormTag::L2,
            initial_extent: 4.0,
            doublings: 3,
            points_per_axis: 41,
            tolerance: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenalisedSupVerdict {
    pub branch: SupBranch,
    pub passed: bool,
    pub psi_at_z: f64,
    pub extents: Vec<f64>,
    pub sups: Vec<f64>,
    pub detail: String,
}

const MAX_GRID_POINTS: usize = 4_000_000;

fn grid_sup<F: Fn(&[f64]) -> f64>(
    psi: &F,
    gamma: f64,
    z: &[f64],
    extent: f64,
    cfg: &PenalisedSupConfig,
) -> Result<f64> {
    let m = cfg.points_per_axis;
    let half = (m / 2) as f64;
    let step = extent / half;
    let d = z.len();
    let total = m
        .checked_pow(d as u32)
        .filter(|t| *t <= MAX_GRID_POINTS)
        .ok_or_else(|| Error::invalid(format!("{m}^{d} lattice points exceed the grid budget")))?;
    let mut x = vec![0.0; d];
    let mut offset = vec![0.0; d];
    let mut best = f64::NEG_INFINITY;
    for index in 0..total {
        let mut rem = index;
        for k in 0..d {
            let o = ((rem % m) as f64 - half) * step;
            rem /= m;
            offset[k] = o;
            x[k] = z[k] + o;
        }
        let v = psi(&x);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "psi on the lattice",
                index,
            });
        }
        best = best.max(v - gamma * cfg.norm.eval(&offset));
    }
    Ok(best)
}

/// Evaluates the penalised supremum on lattices of growing extent around `z`
/// and checks the branch selected by `gamma` against `lip`:
/// equality when `gamma >= lip`, unbounded growth when
/// `gamma <= lip·(1 − 1e-2)`, detected as a strict rise of the supremum over
/// the last two doublings. Values in between are rejected.
pub fn verify_penalised_sup<F>(
    psi: F,
    lip: f64,
    gamma: f64,
    z: &[f64],
    cfg: &PenalisedSupConfig,
) -> Result<PenalisedSupVerdict>
where
    F: Fn(&[f64]) -> f64,
{
    if z.is_empty() {
        return Err(Error::Empty("centre point"));
    }
    if cfg.points_per_axis < 3 || cfg.points_per_axis.is_multiple_of(2) {
        return Err(Error::invalid("points_per_axis must be odd and at least 3"));
    }
    if !(cfg.initial_extent > 0.0) || !(lip >= 0.0) || !(gamma >= 0.0) {
        return Err(Error::invalid(
            "extent, Lipschitz constant and gamma must be nonnegative",
        ));
    }
    let branch = if gamma >= lip {
        SupBranch::Equality
    } else if gamma <= lip * (1.0 - 1e-2) {
        SupBranch::Growth
    } else {
        return Err(Error::invalid(format!(
            "gamma {gamma} is too close to the Lipschitz constant {lip} to separate the branches"
        )));
    };
    if branch == SupBranch::Growth && cfg.doublings < 3 {
        return Err(Error::invalid("growth needs at least three doublings"));
    }
    let psi_at_z = psi(z);
    if !psi_at_z.is_finite() {
        return Err(Error::NonFinite {
            context: "psi at the centre",
            index: 0,
        });
    }
    let extents: Vec<f64> = (0..=cfg.doublings)
        .map(|k| cfg.initial_extent * 2f64.powi(k as i32))
        .collect();
    let sups = extents
        .iter()
        .map(|r| grid_sup(&psi, gamma, z, *r, cfg))
        .collect::<Result<Vec<_>>>()?;

    let (passed, detail) = match branch {
        SupBranch::Equality => {
            let worst = sups
                .iter()
                .map(|s| (s - psi_at_z).abs())
                .fold(0.0, f64::max);
            (
                worst <= cfg.tolerance,
                format!(
                    "max |sup − psi(z)| = {worst:e} against tolerance {:e}",
                    cfg.tolerance
                ),
            )
        }
        SupBranch::Growth => {
            // a small box may still hold the maximiser at z; growth must show
            // over the last two doublings
            let tail = &sups[sups.len() - 3..];
            let growing = tail[1] > tail[0] && tail[2] > tail[1] && tail[2] > psi_at_z;
            (growing, format!("sups over doubling extents: {sups:?}"))
        }
    };
    Ok(PenalisedSupVerdict {
        branch,
        passed,
        psi_at_z,
        extents,
        sups,
        detail,
    })
}
