use super::RobustInstance;
use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::measures::metric_eval;
use crate::numerics::{solve_lp, LpProblem, LpStatus};

/// Worst-case expected loss over the transport ball restricted to the
/// instance's candidate targets.
#[derive(Clone, Debug)]
pub struct PrimalSolution {
    pub value: f64,
    /// Row-major `n × m` mass moved from sample `i` to target `j`.
    pub plan: Vec<f64>,
    pub transport_used: f64,
}

/// Solves
///
/// ```text
/// max  Σ_ij π_ij ℓ(t_j)
/// s.t. Σ_j π_ij = w_i,  Σ_ij c_ij π_ij <= ρ,  π >= 0
/// ```
///
/// by the simplex method. Pairs at infinite cost are left out.
pub fn primal_robust_lp(
    instance: &RobustInstance,
    target_losses: &[f64],
) -> Result<PrimalSolution> {
    let targets = instance
        .candidate_targets
        .as_ref()
        .ok_or_else(|| Error::invalid("primal oracle needs candidate targets"))?;
    ensure_dim("target losses", targets.len(), target_losses.len())?;
    ensure_finite("target losses", target_losses)?;
    let mu = &instance.empirical;
    let (n, m) = (mu.len(), targets.len());

    let mut vars = Vec::new();
    let mut costs = Vec::new();
    for (i, (_, s)) in mu.atoms().enumerate() {
        for (j, t) in targets.points().iter().enumerate() {
            let c = metric_eval(&instance.metric, s, t)?;
            if c.is_finite() {
                vars.push((i, j));
                costs.push(c);
            }
        }
    }
    let objective = vars.iter().map(|&(_, j)| target_losses[j]).collect();
    let mut lp = LpProblem::maximize(objective);
    for (i, w) in mu.weights().iter().enumerate() {
        lp = lp.eq(
            vars.iter()
                .map(|&(a, _)| if a == i { 1.0 } else { 0.0 })
                .collect(),
            *w,
        );
    }
    lp = lp.le(costs.clone(), instance.rho);

    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {
            let mut plan = vec![0.0; n * m];
            for (&(i, j), v) in vars.iter().zip(&sol.point) {
                plan[i * m + j] = *v;
            }
            let transport_used = costs.iter().zip(&sol.point).map(|(c, p)| c * p).sum();
            Ok(PrimalSolution {
                value: sol.value,
                plan,
                transport_used,
            })
        }
        LpStatus::Infeasible => Err(Error::Infeasible(
            "restricted ball is empty; the targets must contain the empirical support".into(),
        )),
        LpStatus::Unbounded => Err(Error::Numerical(
            "bounded program reported unbounded".into(),
        )),
    }
}

pub fn primal_robust_risk_lp(instance: &RobustInstance, target_losses: &[f64]) -> Result<f64> {
    Ok(primal_robust_lp(instance, target_losses)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{
        empirical_from_samples, DiscreteMeasure, LabeledPoint, MetricSpec, PointSet,
    };
    use crate::numerics::NormTag;

    fn line_instance(rho: f64) -> RobustInstance {
        let mu = DiscreteMeasure::dirac(LabeledPoint::new(vec![0.0], 0).unwrap(), 1).unwrap();
        let targets = PointSet::new(
            vec![
                LabeledPoint::new(vec![0.0], 0).unwrap(),
                LabeledPoint::new(vec![1.0], 0).unwrap(),
            ],
            1,
        )
        .unwrap();
        RobustInstance::new(mu, MetricSpec::discrete(NormTag::L1, 1.0, 1).unwrap(), rho)
            .unwrap()
            .with_targets(targets)
            .unwrap()
    }

    #[test]
    fn half_budget_moves_half_the_mass() {
        let inst = line_instance(0.5);
        let v = primal_robust_risk_lp(&inst, &[0.0, 1.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        let dual = super::super::minimize_dual_on_support(&inst, &[0.0, 1.0]).unwrap();
        assert!((dual.value - 0.5).abs() < 1e-12);
        assert!((dual.lambda_star - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_radius_is_empirical_risk() {
        let inst = line_instance(0.0);
        assert!((primal_robust_risk_lp(&inst, &[0.25, 1.0]).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn saturated_budget_reaches_max_loss() {
        let inst = line_instance(10.0);
        assert!((primal_robust_risk_lp(&inst, &[0.25, 1.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_targets_is_an_error() {
        let pts = PointSet::new(vec![LabeledPoint::new(vec![0.0], 0).unwrap()], 1).unwrap();
        let mu = empirical_from_samples(pts).unwrap();
        let inst = RobustInstance::new(mu, MetricSpec::discrete(NormTag::L1, 1.0, 1).unwrap(), 0.1)
            .unwrap();
        assert!(primal_robust_risk_lp(&inst, &[]).is_err());
    }
}
