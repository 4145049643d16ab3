use serde::{Deserialize, Serialize};

use super::{
    empirical_risk, label_loss_table, minimize_dual, primal_robust_risk_lp, target_losses,
    RobustInstance,
};
use crate::error::Result;
use crate::measures::{DiscreteMeasure, LabeledPoint, MetricSpec, PointSet};
use crate::models::{
    ce_lipschitz_bound, feature_lipschitz_bound, BoundMode, Classifier, LinearSoftmax, Mlp,
};
use crate::numerics::NormTag;
use crate::verdict::{extended_f64, Verdict};

/// Smallest feature Lipschitz bound used when rescaling into feature space.
const MIN_FEATURE_LIPSCHITZ: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustCertificate {
    pub empirical_risk: f64,
    pub robust_value: f64,
    pub lambda_star: f64,
    pub rho: f64,
    #[serde(with = "extended_f64")]
    pub kappa: f64,
    pub lipschitz_bound_used: f64,
    pub bound_mode: BoundMode,
    pub norm: NormTag,
    /// Product bound on the feature map when the value is a pushforward risk.
    pub feature_lipschitz: Option<f64>,
    pub active_labels: Vec<usize>,
    pub oracle_value: Option<f64>,
    pub oracle_gap: Option<f64>,
    pub verdicts: Vec<Verdict>,
}

impl RobustCertificate {
    pub fn passed(&self) -> bool {
        crate::verdict::all_passed(&self.verdicts)
    }
}

fn oracle_value<M: Classifier + ?Sized>(
    instance: &RobustInstance,
    model: &M,
    oracle_targets: Option<&PointSet>,
) -> Result<Option<f64>> {
    let Some(grid) = oracle_targets else {
        return Ok(None);
    };
    let restricted = instance.clone().with_targets_and_support(grid)?;
    let targets = restricted
        .candidate_targets()
        .expect("targets were just set");
    let losses = target_losses(model, targets)?;
    Ok(Some(primal_robust_risk_lp(&restricted, &losses)?))
}

struct DualPart {
    robust_value: f64,
    lambda_star: f64,
    lipschitz_bound: f64,
    active_labels: Vec<usize>,
    decomposition_error: f64,
}

fn assemble(
    instance: &RobustInstance,
    empirical: f64,
    dual: DualPart,
    mode: BoundMode,
    feature_lipschitz: Option<f64>,
    oracle: Option<f64>,
) -> RobustCertificate {
    let v = dual.robust_value;
    let mut verdicts = vec![
        Verdict::le("empirical risk below robust value", empirical, v, 1e-9),
        Verdict::le(
            "lambda meets the Lipschitz constraint",
            dual.lipschitz_bound,
            dual.lambda_star,
            0.0,
        ),
        Verdict::le(
            "value equals mean envelope plus lambda rho",
            dual.decomposition_error,
            0.0,
            1e-10 * (1.0 + v.abs()),
        ),
    ];
    if let Some(o) = oracle {
        verdicts.push(Verdict::le(
            "grid oracle below robust value",
            o,
            v,
            1e-9 * (1.0 + v.abs()),
        ));
    }
    RobustCertificate {
        empirical_risk: empirical,
        robust_value: v,
        lambda_star: dual.lambda_star,
        rho: instance.rho,
        kappa: instance.metric.kappa(),
        lipschitz_bound_used: dual.lipschitz_bound,
        bound_mode: mode,
        norm: instance.metric.x_norm(),
        feature_lipschitz,
        active_labels: dual.active_labels,
        oracle_value: oracle,
        oracle_gap: oracle.map(|o| v - o),
        verdicts,
    }
}

fn solve_dual<M: Classifier + ?Sized>(
    instance: &RobustInstance,
    model: &M,
    bound: f64,
) -> Result<DualPart> {
    let losses = label_loss_table(model, &instance.empirical)?;
    let sol = minimize_dual(instance, &losses, bound)?;
    let recomposed: f64 = instance
        .empirical
        .weights()
        .iter()
        .zip(&sol.envelopes)
        .map(|(w, l)| w * l)
        .sum::<f64>()
        + sol.lambda_star * instance.rho;
    Ok(DualPart {
        robust_value: sol.value,
        lambda_star: sol.lambda_star,
        lipschitz_bound: bound,
        active_labels: sol.active_labels,
        decomposition_error: (recomposed - sol.value).abs(),
    })
}

/// Robust risk of a linear softmax classifier from the one-dimensional dual,
/// with the Lipschitz constraint `λ >= ce_lipschitz_bound(model, mode)`.
/// With `oracle_targets` the primal LP over those targets plus the empirical
/// support is solved as a lower-bound cross-check.
pub fn linear_robust_risk(
    instance: &RobustInstance,
    model: &LinearSoftmax,
    mode: BoundMode,
    oracle_targets: Option<&PointSet>,
) -> Result<RobustCertificate> {
    let bound = ce_lipschitz_bound(model, instance.metric.x_norm(), mode)?;
    let empirical = empirical_risk(|p| model.loss(&p.x, p.y), &instance.empirical)?;
    let dual = solve_dual(instance, model, bound)?;
    let oracle = oracle_value(instance, model, oracle_targets)?;
    Ok(assemble(instance, empirical, dual, mode, None, oracle))
}

/// Robust risk of the head over the image ball in feature space.
///
/// With `L_φ` the product bound of the hidden layers, the feature-space
/// problem has points `(φ(x_i), y_i)`, label weight `κ·L_φ` and radius `ρ·L_φ`,
/// and its Lipschitz constraint is that of the head alone. The certificate
/// reports `λ*` and the bound rescaled to input units (times `L_φ`), in which
/// the constraint reads `λ >= lips(ℓ_h)·L_φ`.
pub fn pushforward_risk(
    instance: &RobustInstance,
    model: &Mlp,
    mode: BoundMode,
    oracle_targets: Option<&PointSet>,
) -> Result<RobustCertificate> {
    let tag = instance.metric.x_norm();
    let lip_phi = feature_lipschitz_bound(model, tag)?.max(MIN_FEATURE_LIPSCHITZ);
    let feature_points = instance
        .empirical
        .support()
        .points()
        .iter()
        .map(|p| LabeledPoint::new(model.features(&p.x)?, p.y))
        .collect::<Result<Vec<_>>>()?;
    let support = PointSet::new(feature_points, instance.empirical.support().label_count())?;
    let feature_measure = DiscreteMeasure::new(support, instance.empirical.weights().to_vec())?;
    let kappa = instance.metric.kappa() * lip_phi;
    let feature_metric = MetricSpec::new(tag, kappa, instance.metric.label_metric().clone())?;
    let feature_instance =
        RobustInstance::new(feature_measure, feature_metric, instance.rho * lip_phi)?;

    let head = model.head();
    let head_bound = ce_lipschitz_bound(head, tag, mode)?;
    let mut dual = solve_dual(&feature_instance, head, head_bound)?;
    dual.lambda_star *= lip_phi;
    dual.lipschitz_bound *= lip_phi;

    let empirical = empirical_risk(|p| model.loss(&p.x, p.y), &instance.empirical)?;
    let oracle = oracle_value(instance, model, oracle_targets)?;
    Ok(assemble(
        instance,
        empirical,
        dual,
        mode,
        Some(lip_phi),
        oracle,
    ))
}

/// Dispatches on depth: a network without hidden layers is certified directly,
/// a deeper one through its pushforward risk.
pub fn certify(
    instance: &RobustInstance,
    model: &Mlp,
    mode: BoundMode,
    oracle_targets: Option<&PointSet>,
) -> Result<RobustCertificate> {
    if model.hidden().is_empty() {
        linear_robust_risk(instance, model.head(), mode, oracle_targets)
    } else {
        pushforward_risk(instance, model, mode, oracle_targets)
    }
}
