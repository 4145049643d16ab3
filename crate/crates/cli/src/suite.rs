//! The oracle suite behind `wasslip verify`. Every check draws its instances
//! from named streams of the master seed, so a run is a pure function of the
//! seed and the suite sizes.

use rand::Rng;
use serde::{Deserialize, Serialize};
use wasslip_core::adversarial::{verify_adversarial_bound, AttackConfig, AttackMethod, BallSpec};
use wasslip_core::data::{gen_data, lattice, DataSpec};
use wasslip_core::measures::{empirical_from_samples, pushforward, transport_cost, CostMatrix};
use wasslip_core::models::{
    ce_lipschitz_bound, empirical_lipschitz, feature_lipschitz_bound, network_lipschitz_bound,
    slice_lipschitz, Activation,
};
use wasslip_core::rng::{derive_seed, stream};
use wasslip_core::robust::{
    empirical_risk, label_flip_threshold, label_loss_table, linear_robust_risk,
    minimize_dual_on_support, primal_robust_lp, primal_robust_risk_lp, pushforward_risk,
    verify_penalised_sup, PenalisedSupConfig, SupBranch,
};
use wasslip_core::train::{penalty_terms, ObjectiveKind};
use wasslip_core::verdict::all_passed;
use wasslip_core::{
    BoundMode, Classifier, DiscreteMeasure, LabeledPoint, LinearSoftmax, MetricSpec, Mlp, NormTag,
    PointSet, Result, RobustInstance, Verdict,
};

use crate::config::VerifySection;

const TAGS: [NormTag; 3] = [NormTag::L1, NormTag::L2, NormTag::Linf];
const ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Tanh, Activation::Identity];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub verdicts: Vec<Verdict>,
}

impl CheckReport {
    fn new(name: &str, verdicts: Vec<Verdict>) -> Self {
        Self {
            name: name.into(),
            passed: all_passed(&verdicts),
            verdicts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub checks: Vec<CheckReport>,
}

impl SuiteReport {
    pub fn failing(&self) -> Vec<String> {
        self.checks
            .iter()
            .flat_map(|c| {
                c.verdicts
                    .iter()
                    .filter(|v| !v.passed)
                    .map(move |v| format!("{}: {}", c.name, v.name))
            })
            .collect()
    }
}

/// Aggregates one property over many instances into a single verdict.
struct Tally {
    name: &'static str,
    total: usize,
    failed: usize,
    worst: f64,
    first_failure: Option<String>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            total: 0,
            failed: 0,
            worst: f64::NEG_INFINITY,
            first_failure: None,
        }
    }

    /// `lhs <= rhs + slack` on one instance.
    fn le(&mut self, instance: usize, lhs: f64, rhs: f64, slack: f64) {
        let margin = lhs - rhs - slack;
        let ok = margin <= 0.0;
        if margin.is_nan() || margin > self.worst {
            self.worst = margin;
        }
        self.flag(instance, ok, || {
            format!("lhs={lhs:.17e} rhs={rhs:.17e} slack={slack:e}")
        });
    }

    fn flag(&mut self, instance: usize, ok: bool, detail: impl FnOnce() -> String) {
        self.total += 1;
        if !ok {
            self.failed += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(format!("instance {instance}: {}", detail()));
            }
        }
    }

    fn verdict(self) -> Verdict {
        let mut detail = format!(
            "{} of {} instances passed",
            self.total - self.failed,
            self.total
        );
        if self.worst.is_finite() {
            detail.push_str(&format!("; worst margin {:.3e}", self.worst));
        }
        if let Some(f) = self.first_failure {
            detail.push_str(&format!("; first failure {f}"));
        }
        Verdict::new(self.name, self.failed == 0 && self.total > 0, detail)
    }
}

fn error_verdict(name: &str, instance: usize, e: &wasslip_core::Error) -> Verdict {
    Verdict::new(
        format!("{name} (instance {instance})"),
        false,
        format!("error: {e}"),
    )
}

fn random_points<R: Rng>(
    r: &mut R,
    n: usize,
    dim: usize,
    k: usize,
    scale: f64,
) -> Result<PointSet> {
    let pts = (0..n)
        .map(|_| {
            let x = (0..dim).map(|_| r.random_range(-scale..=scale)).collect();
            LabeledPoint::new(x, r.random_range(0..k))
        })
        .collect::<Result<Vec<_>>>()?;
    PointSet::new(pts, k)
}

fn random_measure<R: Rng>(r: &mut R, n: usize, dim: usize, k: usize) -> Result<DiscreteMeasure> {
    let pts = random_points(r, n, dim, k, 1.0)?;
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    w[0] += 1.0 - w.iter().sum::<f64>();
    DiscreteMeasure::new(pts, w)
}

fn planar_grid(points_per_axis: usize, extent: f64, k: usize) -> Result<PointSet> {
    PointSet::with_all_labels(&lattice(points_per_axis, 2, -extent, extent), k)
}

/// Finite-support dual against the primal LP on random finite instances
/// (at most 8 atoms, 20 targets, 4 labels, ρ in [0, 2]).
pub fn strong_duality(master: u64, count: usize) -> CheckReport {
    let mut tally = Tally::new("dual value equals primal LP value");
    let mut errors = Vec::new();
    for i in 0..count {
        let run = || -> Result<(f64, f64)> {
            let mut r = stream(master, &format!("strong-duality-{i}"));
            let n = r.random_range(1..=8);
            let k = r.random_range(2..=4);
            let dim = r.random_range(1..=3);
            let mu = random_measure(&mut r, n, dim, k)?;
            let kappa = if r.random_bool(0.2) {
                f64::INFINITY
            } else {
                r.random_range(0.1..3.0)
            };
            let metric = MetricSpec::discrete(TAGS[r.random_range(0..3)], kappa, k)?;
            let rho = r.random_range(0.0..=2.0);
            let extra_count = r.random_range(1..=20 - n);
            let extra = random_points(&mut r, extra_count, dim, k, 1.5)?;
            let inst = RobustInstance::new(mu, metric, rho)?.with_targets_and_support(&extra)?;
            let m = inst.candidate_targets().map_or(0, |t| t.len());
            let losses: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..3.0)).collect();
            Ok((
                minimize_dual_on_support(&inst, &losses)?.value,
                primal_robust_risk_lp(&inst, &losses)?,
            ))
        };
        match run() {
            Ok((dual, primal)) => {
                tally.le(i, (dual - primal).abs(), 0.0, 1e-6 * (1.0 + dual.abs()))
            }
            Err(e) => errors.push(error_verdict("strong duality", i, &e)),
        }
    }
    let mut verdicts = vec![tally.verdict()];
    verdicts.extend(errors);
    CheckReport::new("strong duality", verdicts)
}

fn planar_softmax<R: Rng>(r: &mut R) -> Result<(RobustInstance, LinearSoftmax)> {
    let k = r.random_range(2..=3);
    let model = LinearSoftmax::random(k, 2, true, r)?;
    let n = r.random_range(2..=5);
    let mu = random_measure(r, n, 2, k)?;
    let metric = MetricSpec::discrete(NormTag::L2, r.random_range(0.5..2.0), k)?;
    let inst = RobustInstance::new(mu, metric, r.random_range(0.05..0.5))?;
    Ok((inst, model))
}

/// Grid sizes (points per axis) of the nested oracle refinements.
pub const REFINEMENT_GRIDS: [usize; 3] = [5, 9, 17];

/// Dual value of linear softmax instances in the plane against LP oracles on
/// nested grids of 25, 81 and 289 points.
pub fn dual_refinement(master: u64, count: usize, mode: BoundMode) -> CheckReport {
    let mut upper = Tally::new("dual value above every grid oracle");
    let mut shrink = Tally::new("oracle gap shrinks under refinement");
    let mut errors = Vec::new();
    for i in 0..count {
        let run = || -> Result<Vec<f64>> {
            let mut r = stream(master, &format!("refinement-{i}"));
            let (inst, model) = planar_softmax(&mut r)?;
            let mut gaps = Vec::new();
            for m in REFINEMENT_GRIDS {
                let grid = planar_grid(m, 2.0, model.label_count())?;
                let cert = linear_robust_risk(&inst, &model, mode, Some(&grid))?;
                gaps.push(cert.oracle_gap.unwrap_or(f64::NAN));
            }
            Ok(gaps)
        };
        match run() {
            Ok(gaps) => {
                for g in &gaps {
                    upper.le(i, 0.0, *g, 1e-9);
                }
                for w in gaps.windows(2) {
                    shrink.le(i, w[1], w[0], 1e-9);
                }
            }
            Err(e) => errors.push(error_verdict("refinement", i, &e)),
        }
    }
    let mut verdicts = vec![upper.verdict(), shrink.verdict()];
    verdicts.extend(errors);
    CheckReport::new("dual refinement", verdicts)
}

/// Above the computed label-flip threshold κ₀ (at κ = 2κ₀) the dual value is
/// the empirical risk plus ρ times the Lipschitz bound.
pub fn label_threshold(master: u64, count: usize, mode: BoundMode) -> CheckReport {
    let mut finite = Tally::new("finite threshold exists");
    let mut closed = Tally::new("value equals empirical risk plus rho times bound");
    let mut errors = Vec::new();
    for i in 0..count {
        let run = || -> Result<Option<(f64, f64)>> {
            let mut r = stream(master, &format!("threshold-{i}"));
            let (inst, model) = planar_softmax(&mut r)?;
            let bound = ce_lipschitz_bound(&model, NormTag::L2, mode)?;
            let losses = label_loss_table(&model, inst.empirical())?;
            let Some(kappa0) = label_flip_threshold(&inst, &losses, bound)? else {
                return Ok(None);
            };
            let kappa = if kappa0 > 0.0 { 2.0 * kappa0 } else { 1.0 };
            let inst = inst.with_kappa(kappa)?;
            let cert = linear_robust_risk(&inst, &model, mode, None)?;
            Ok(Some((
                cert.robust_value,
                cert.empirical_risk + inst.rho() * bound,
            )))
        };
        match run() {
            Ok(Some((v, expected))) => {
                finite.flag(i, true, String::new);
                closed.le(i, (v - expected).abs(), 0.0, 1e-9);
            }
            Ok(None) => finite.flag(i, false, || "no finite threshold".into()),
            Err(e) => errors.push(error_verdict("threshold", i, &e)),
        }
    }
    let mut verdicts = vec![finite.verdict(), closed.verdict()];
    verdicts.extend(errors);
    CheckReport::new("label threshold", verdicts)
}

fn huber(x: &[f64]) -> f64 {
    let a = x[0].abs();
    if a <= 1.0 {
        0.5 * a * a
    } else {
        a - 0.5
    }
}

fn branch_verdict(
    name: String,
    expect: SupBranch,
    result: Result<wasslip_core::robust::PenalisedSupVerdict>,
) -> Verdict {
    match result {
        Ok(v) => Verdict::new(name, v.passed && v.branch == expect, v.detail),
        Err(e) => Verdict::new(name, false, format!("error: {e}")),
    }
}

/// Penalised supremum on |x|, the Huber function and cross-entropy slices:
/// equality at γ ≥ lip and growth at γ = lip / 2.
pub fn penalised_supremum(master: u64, mode: BoundMode) -> CheckReport {
    let cfg = PenalisedSupConfig::default();
    let mut verdicts = Vec::new();
    let abs: fn(&[f64]) -> f64 = |x| x[0].abs();
    for (psi, name) in [(abs, "abs"), (huber as fn(&[f64]) -> f64, "huber")] {
        for z in [-1.5, 0.0, 2.0] {
            verdicts.push(branch_verdict(
                format!("{name} at {z}: equality"),
                SupBranch::Equality,
                verify_penalised_sup(psi, 1.0, 1.0, &[z], &cfg),
            ));
            verdicts.push(branch_verdict(
                format!("{name} at {z}: growth"),
                SupBranch::Growth,
                verify_penalised_sup(psi, 1.0, 0.5, &[z], &cfg),
            ));
        }
    }
    for (i, tag) in TAGS.into_iter().enumerate() {
        let mut r = stream(master, &format!("sup-slice-{i}"));
        let model = match LinearSoftmax::random(3, 2, true, &mut r) {
            Ok(m) => m,
            Err(e) => {
                verdicts.push(error_verdict("softmax slice", i, &e));
                continue;
            }
        };
        let z = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let cfg = PenalisedSupConfig {
            norm: tag,
            ..PenalisedSupConfig::default()
        };
        for y in 0..3 {
            let (lip, bound) = match (
                slice_lipschitz(&model, y, tag),
                ce_lipschitz_bound(&model, tag, mode),
            ) {
                (Ok(l), Ok(b)) => (l, b),
                (Err(e), _) | (_, Err(e)) => {
                    verdicts.push(error_verdict("softmax slice", i, &e));
                    continue;
                }
            };
            let psi = |x: &[f64]| model.loss(x, y).unwrap_or(f64::NAN);
            verdicts.push(Verdict::le(
                format!("{tag:?} slice {y}: slice constant below bound"),
                lip,
                bound,
                1e-12,
            ));
            for (gamma, label) in [(lip, "lip"), (bound.max(lip), "bound")] {
                verdicts.push(branch_verdict(
                    format!("{tag:?} slice {y}: equality at gamma = {label}"),
                    SupBranch::Equality,
                    verify_penalised_sup(psi, lip, gamma, &z, &cfg),
                ));
            }
            verdicts.push(branch_verdict(
                format!("{tag:?} slice {y}: growth at gamma = lip / 2"),
                SupBranch::Growth,
                verify_penalised_sup(psi, lip, 0.5 * lip, &z, &cfg),
            ));
        }
    }
    CheckReport::new("penalised supremum", verdicts)
}

/// Pushforward of ball members and the pushforward risk. For each triple
/// (μ, ν, φ): ν is the target marginal of an optimal plan of the primal LP
/// (so ν lies in the ball of radius ρ around μ), φ the hidden layers of a
/// seeded ReLU network.
pub fn pushforward_checks(master: u64, count: usize, mode: BoundMode) -> CheckReport {
    let mut member = Tally::new("constructed measure inside the input ball");
    let mut image = Tally::new("image measure inside the scaled image ball");
    let mut dominates = Tally::new("pushforward value above input grid oracle");
    let mut errors = Vec::new();
    for i in 0..count {
        let run = || -> Result<[(f64, f64); 3]> {
            let mut r = stream(master, &format!("pushforward-{i}"));
            let k = 2;
            let tag = [NormTag::L2, NormTag::Linf][i % 2];
            let n = r.random_range(2..=4);
            let mu = random_measure(&mut r, n, 2, k)?;
            let kappa = r.random_range(0.5..2.0);
            let rho = r.random_range(0.05..0.8);
            let metric = MetricSpec::discrete(tag, kappa, k)?;
            let extra = random_points(&mut r, 6, 2, k, 1.5)?;
            let inst = RobustInstance::new(mu.clone(), metric.clone(), rho)?
                .with_targets_and_support(&extra)?;
            let targets = inst
                .candidate_targets()
                .cloned()
                .expect("targets were just set");
            let losses: Vec<f64> = (0..targets.len())
                .map(|_| r.random_range(0.0..1.0))
                .collect();
            let plan = primal_robust_lp(&inst, &losses)?;
            let m = targets.len();
            let mut nu_w: Vec<f64> = (0..m)
                .map(|j| (0..n).map(|a| plan.plan[a * m + j]).sum::<f64>().max(0.0))
                .collect();
            let total: f64 = nu_w.iter().sum();
            nu_w.iter_mut().for_each(|w| *w /= total);
            let nu = DiscreteMeasure::new(targets, nu_w)?;
            let moved = transport_cost(
                &mu,
                &nu,
                &CostMatrix::from_metric(&metric, mu.support(), nu.support())?,
            )?;

            let depth = r.random_range(1..=2);
            let mut dims = vec![2];
            for _ in 0..depth {
                dims.push(r.random_range(2..=6));
            }
            dims.push(k);
            let net = Mlp::random(&dims, Activation::Relu, true, &mut r)?;
            let lip = feature_lipschitz_bound(&net, tag)?;
            let phi = |p: &LabeledPoint| LabeledPoint::new(net.features(&p.x)?, p.y);
            let (fmu, fnu) = (pushforward(&mu, phi)?, pushforward(&nu, phi)?);
            let fmetric = MetricSpec::discrete(tag, kappa * lip, k)?;
            let pushed = transport_cost(
                &fmu,
                &fnu,
                &CostMatrix::from_metric(&fmetric, fmu.support(), fnu.support())?,
            )?;

            let input = RobustInstance::new(mu, metric, rho)?;
            let grid = planar_grid(9, 2.0, k)?;
            let cert = pushforward_risk(&input, &net, mode, Some(&grid))?;
            Ok([
                (moved, rho),
                (pushed, lip * rho),
                (cert.oracle_value.unwrap_or(f64::NAN), cert.robust_value),
            ])
        };
        match run() {
            Ok([a, b, c]) => {
                member.le(i, a.0, a.1, 1e-9);
                image.le(i, b.0, b.1, 1e-8);
                dominates.le(i, c.0, c.1, 1e-8);
            }
            Err(e) => errors.push(error_verdict("pushforward", i, &e)),
        }
    }
    let mut verdicts = vec![member.verdict(), image.verdict(), dominates.verdict()];
    verdicts.extend(errors);
    CheckReport::new("pushforward", verdicts)
}

/// Radii and norms cycled through by [`adversarial_bound`].
pub const ATTACK_RADII: [f64; 3] = [0.01, 0.1, 0.5];
pub const ATTACK_NORMS: [NormTag; 2] = [NormTag::L2, NormTag::Linf];

/// Adversarial risk (PGD, plus GRID in two dimensions) against the robust
/// value at ρ = ε, with the attacked measure checked to lie in the ball.
pub fn adversarial_bound(master: u64, count: usize, mode: BoundMode) -> CheckReport {
    let mut tallies = [
        Tally::new("attacks stay inside the ball"),
        Tally::new("adversarial risk below robust value"),
        Tally::new("attacked measure inside the transport ball"),
        Tally::new("adversarial risk below LP oracle"),
        Tally::new("LP oracle below robust value"),
    ];
    let mut errors = Vec::new();
    for t in 0..count {
        let eps = ATTACK_RADII[t % 3];
        let norm = ATTACK_NORMS[(t / 3) % 2];
        let dim = if (t / 6) % 2 == 0 { 2 } else { 3 };
        let seed = derive_seed(master, &format!("attack-tuple-{t}"));
        let run = || -> Result<Vec<Vec<Verdict>>> {
            let mut r = stream(seed, "model");
            let k = 2 + t % 2;
            let data = gen_data(&DataSpec::blobs(6 * k, k, dim), derive_seed(seed, "data"))?;
            let mu = empirical_from_samples(data)?;
            let model = if t % 4 == 0 {
                Mlp::linear(LinearSoftmax::random(k, dim, true, &mut r)?)
            } else {
                Mlp::random(
                    &[dim, 5, k],
                    ACTIVATIONS[r.random_range(0..3)],
                    true,
                    &mut r,
                )?
            };
            let inst = RobustInstance::new(mu, MetricSpec::discrete(norm, 1.0, k)?, eps)?;
            let ball = BallSpec::new(norm, eps)?;
            let mut methods = vec![AttackMethod::Pgd];
            if dim == 2 {
                methods.push(AttackMethod::Grid);
            }
            methods
                .into_iter()
                .map(|m| {
                    let cfg = AttackConfig::default().with_method(m).with_seed(seed);
                    Ok(verify_adversarial_bound(&model, &inst, &ball, &cfg, mode)?.verdicts)
                })
                .collect()
        };
        match run() {
            Ok(per_method) => {
                for verdicts in per_method {
                    for (tally, v) in tallies.iter_mut().zip(&verdicts) {
                        tally.flag(t, v.passed, || format!("{}: {}", v.name, v.detail));
                    }
                }
            }
            Err(e) => errors.push(error_verdict("adversarial bound", t, &e)),
        }
    }
    let mut verdicts: Vec<Verdict> = tallies.into_iter().map(Tally::verdict).collect();
    verdicts.extend(errors);
    CheckReport::new("adversarial bound", verdicts)
}

/// Network Lipschitz bounds and the penalty chain on seeded MLPs of up to
/// four layers and widths up to 16: sampled quotients below the product
/// bound, product below Young, product penalty below spectral penalty, and
/// the robust value (κ = ∞) below empirical risk plus the product penalty.
pub fn lipschitz_chain(master: u64, count: usize, mode: BoundMode) -> CheckReport {
    let mut sampled = Tally::new("sampled Lipschitz quotient below product bound");
    let mut young = Tally::new("product bound below Young bound");
    let mut penalties = Tally::new("product penalty below spectral penalty");
    let mut robust = Tally::new("robust value below empirical risk plus product penalty");
    let mut errors = Vec::new();
    for i in 0..count {
        let mut run = || -> Result<()> {
            let mut r = stream(master, &format!("lipschitz-{i}"));
            let layers = r.random_range(1..=4);
            let mut dims: Vec<usize> = (0..=layers).map(|_| r.random_range(1..=16)).collect();
            let last = dims.len() - 1;
            dims[last] = dims[last].max(2);
            let net = Mlp::random(&dims, ACTIVATIONS[r.random_range(0..3)], true, &mut r)?;
            for tag in TAGS {
                let b = network_lipschitz_bound(&net, tag)?;
                let dim = dims[0];
                let est = empirical_lipschitz(
                    |x| net.logits(x),
                    |g: &mut rand_chacha::ChaCha8Rng| {
                        (0..dim).map(|_| g.random_range(-2.0..2.0)).collect()
                    },
                    &mut r,
                    200,
                    tag,
                )?;
                sampled.le(i, est, b.product, 1e-9 * (1.0 + b.product));
                young.le(i, b.product, b.young, 1e-9);
            }
            let rho = r.random_range(0.05..1.0);
            let (product, _) = penalty_terms(&net, ObjectiveKind::Product, rho, mode, None)?;
            let (spectral, _) = penalty_terms(&net, ObjectiveKind::Spectral, rho, mode, None)?;
            penalties.le(i, product, spectral, 1e-9 * (1.0 + spectral));

            let k = dims[last];
            let mu = random_measure(&mut r, 4, dims[0], k)?;
            let inst = RobustInstance::new(
                mu,
                MetricSpec::discrete(NormTag::L2, f64::INFINITY, k)?,
                rho,
            )?;
            let cert = wasslip_core::robust::certify(&inst, &net, mode, None)?;
            let erm = empirical_risk(|p| net.loss(&p.x, p.y), inst.empirical())?;
            robust.le(
                i,
                cert.robust_value,
                erm + product,
                1e-9 * (1.0 + cert.robust_value.abs()),
            );
            Ok(())
        };
        if let Err(e) = run() {
            errors.push(error_verdict("Lipschitz chain", i, &e));
        }
    }
    let mut verdicts = vec![
        sampled.verdict(),
        young.verdict(),
        penalties.verdict(),
        robust.verdict(),
    ];
    verdicts.extend(errors);
    CheckReport::new("Lipschitz chain", verdicts)
}

/// Runs every check at the configured sizes.
pub fn run_suite(master: u64, sizes: &VerifySection) -> SuiteReport {
    let mode = sizes.bound_mode;
    let checks = vec![
        strong_duality(master, sizes.strong_duality_instances),
        dual_refinement(master, sizes.refinement_instances, mode),
        label_threshold(master, sizes.threshold_instances, mode),
        penalised_supremum(master, mode),
        pushforward_checks(master, sizes.pushforward_triples, mode),
        adversarial_bound(master, sizes.attack_tuples, mode),
        lipschitz_chain(master, sizes.lipschitz_networks, mode),
    ];
    SuiteReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
