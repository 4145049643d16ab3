//! Distributionally robust risk over transport-cost balls: the dual program
//! with its Lipschitz constraint, a primal LP oracle on finite supports, the
//! pushforward bound for networks, and certificate assembly.

mod certificate;
mod dual;
mod penalised_sup;
mod primal;

pub use certificate::{certify, linear_robust_risk, pushforward_risk, RobustCertificate};
pub use dual::{
    dual_objective, inner_label_sup, label_flip_threshold, minimize_dual, minimize_dual_on_support,
    DualProgram, DualSolution, MAX_BREAKPOINTS,
};
pub use penalised_sup::{verify_penalised_sup, PenalisedSupConfig, PenalisedSupVerdict, SupBranch};
pub use primal::{primal_robust_lp, primal_robust_risk_lp, PrimalSolution};

use crate::error::{ensure_dim, Error, Result};
use crate::measures::{DiscreteMeasure, LabeledPoint, MetricSpec, PointSet};
use crate::models::Classifier;

/// A robust-risk problem: the empirical centre, the κ-metric, the radius and
/// optionally a finite surrogate of the input–label space for LP oracles.
#[derive(Clone, Debug)]
pub struct RobustInstance {
    pub(crate) empirical: DiscreteMeasure,
    pub(crate) metric: MetricSpec,
    pub(crate) rho: f64,
    pub(crate) candidate_targets: Option<PointSet>,
}

impl RobustInstance {
    pub fn new(empirical: DiscreteMeasure, metric: MetricSpec, rho: f64) -> Result<Self> {
        if rho.is_nan() || rho < 0.0 || rho.is_infinite() {
            return Err(Error::invalid(format!(
                "radius must be finite and nonnegative, got {rho}"
            )));
        }
        check_labels(empirical.support(), &metric)?;
        Ok(Self {
            empirical,
            metric,
            rho,
            candidate_targets: None,
        })
    }

    pub fn with_targets(mut self, targets: PointSet) -> Result<Self> {
        ensure_dim(
            "target dimension",
            self.empirical.support().dim(),
            targets.dim(),
        )?;
        check_labels(&targets, &self.metric)?;
        self.candidate_targets = Some(targets);
        Ok(self)
    }

    /// Candidate targets extended by the empirical support, which keeps the
    /// restricted ball nonempty.
    pub fn with_targets_and_support(self, targets: &PointSet) -> Result<Self> {
        let all = self.empirical.support().union(targets)?;
        self.with_targets(all)
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        let mut next = Self::new(self.empirical.clone(), self.metric.clone(), rho)?;
        next.candidate_targets = self.candidate_targets.clone();
        Ok(next)
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        let mut next = Self::new(
            self.empirical.clone(),
            self.metric.with_kappa(kappa)?,
            self.rho,
        )?;
        next.candidate_targets = self.candidate_targets.clone();
        Ok(next)
    }

    pub fn empirical(&self) -> &DiscreteMeasure {
        &self.empirical
    }

    pub fn metric(&self) -> &MetricSpec {
        &self.metric
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn candidate_targets(&self) -> Option<&PointSet> {
        self.candidate_targets.as_ref()
    }
}

fn check_labels(points: &PointSet, metric: &MetricSpec) -> Result<()> {
    let k = metric.label_count();
    match points.points().iter().find(|p| p.y >= k) {
        Some(p) => Err(Error::invalid(format!(
            "label {} outside the metric's {k} labels",
            p.y
        ))),
        None => Ok(()),
    }
}

/// `Σ_i w_i ℓ(s_i)`.
pub fn empirical_risk<F>(mut loss: F, mu: &DiscreteMeasure) -> Result<f64>
where
    F: FnMut(&LabeledPoint) -> Result<f64>,
{
    let mut total = 0.0;
    for (i, (w, p)) in mu.atoms().enumerate() {
        let l = loss(p)?;
        if !l.is_finite() {
            return Err(Error::NonFinite {
                context: "loss on the empirical support",
                index: i,
            });
        }
        total += w * l;
    }
    Ok(total)
}

/// `losses[i][y] = ℓ(x_i, y)` for every atom and label.
pub fn label_loss_table<M: Classifier + ?Sized>(
    model: &M,
    mu: &DiscreteMeasure,
) -> Result<Vec<Vec<f64>>> {
    mu.support()
        .points()
        .iter()
        .map(|p| model.losses_all_labels(&p.x))
        .collect()
}

/// `ℓ(t_j)` for every candidate target.
pub fn target_losses<M: Classifier + ?Sized>(model: &M, targets: &PointSet) -> Result<Vec<f64>> {
    targets
        .points()
        .iter()
        .map(|t| model.loss(&t.x, t.y))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::empirical_from_samples;
    use crate::numerics::NormTag;

    #[test]
    fn empirical_risk_examples() {
        let pts = PointSet::new(
            (0..3)
                .map(|i| LabeledPoint::new(vec![i as f64], 0).unwrap())
                .collect(),
            1,
        )
        .unwrap();
        let mu = empirical_from_samples(pts).unwrap();
        assert!((empirical_risk(|_| Ok(2.5), &mu).unwrap() - 2.5).abs() < 1e-15);
        assert!((empirical_risk(|p| Ok(p.x[0]), &mu).unwrap() - 1.0).abs() < 1e-15);
        let err = empirical_risk(|p| Ok(if p.x[0] == 2.0 { f64::NAN } else { 0.0 }), &mu);
        assert!(matches!(err, Err(Error::NonFinite { index: 2, .. })));

        let dirac = DiscreteMeasure::dirac(LabeledPoint::new(vec![4.0], 0).unwrap(), 1).unwrap();
        assert_eq!(empirical_risk(|p| Ok(p.x[0] * 2.0), &dirac).unwrap(), 8.0);
    }

    #[test]
    fn instance_validation() {
        let mu = DiscreteMeasure::dirac(LabeledPoint::new(vec![0.0], 2).unwrap(), 3).unwrap();
        let metric = MetricSpec::discrete(NormTag::L2, 1.0, 2).unwrap();
        assert!(RobustInstance::new(mu.clone(), metric, 0.1).is_err());
        let metric = MetricSpec::discrete(NormTag::L2, 1.0, 3).unwrap();
        assert!(RobustInstance::new(mu.clone(), metric.clone(), -0.1).is_err());
        let inst = RobustInstance::new(mu, metric, 0.1).unwrap();
        let wrong_dim =
            PointSet::new(vec![LabeledPoint::new(vec![0.0, 1.0], 0).unwrap()], 3).unwrap();
        assert!(inst.with_targets(wrong_dim).is_err());
    }
}
