mod common;

use common::{random_measure, random_points, rng, square_grid};
use proptest::prelude::*;
use rand::Rng;
use wasslip_core::measures::{
    metric_eval, pushforward, transport_cost, CostMatrix, LabeledPoint, MetricSpec, PointSet,
};
use wasslip_core::models::{
    ce_lipschitz_bound, feature_lipschitz_bound, slice_lipschitz, Activation, BoundMode,
};
use wasslip_core::robust::{
    empirical_risk, label_flip_threshold, label_loss_table, linear_robust_risk, minimize_dual,
    minimize_dual_on_support, primal_robust_lp, primal_robust_risk_lp, pushforward_risk,
    verify_penalised_sup, DualProgram, PenalisedSupConfig, RobustInstance, SupBranch,
};
use wasslip_core::{Classifier, DiscreteMeasure, LinearSoftmax, Mlp, NormTag};
use wasslip_testkit::{grid_minimum, vertex_enumeration_max};

const TAGS: [NormTag; 3] = [NormTag::L1, NormTag::L2, NormTag::Linf];

/// A random finite instance: `n` atoms, their support plus `extra` random
/// targets, random finite losses on the targets.
fn finite_instance(seed: u64, n: usize, extra: usize) -> (RobustInstance, Vec<f64>) {
    let mut r = rng(seed);
    let k = r.random_range(2..=4);
    let dim = r.random_range(1..=3);
    let mu = random_measure(&mut r, n, dim, k);
    let kappa = if r.random_bool(0.2) {
        f64::INFINITY
    } else {
        r.random_range(0.1..3.0)
    };
    let metric = MetricSpec::discrete(TAGS[r.random_range(0..3)], kappa, k).unwrap();
    let rho = r.random_range(0.0..=2.0);
    let extra_pts = random_points(&mut r, extra, dim, k, 1.5);
    let inst = RobustInstance::new(mu, metric, rho)
        .unwrap()
        .with_targets_and_support(&extra_pts)
        .unwrap();
    let m = inst.candidate_targets().unwrap().len();
    let losses = (0..m).map(|_| r.random_range(0.0..3.0)).collect();
    (inst, losses)
}

fn random_label_instance(seed: u64) -> (RobustInstance, Vec<Vec<f64>>, f64) {
    let mut r = rng(seed);
    let k = r.random_range(2..=4);
    let n = r.random_range(1..=8);
    let mu = random_measure(&mut r, n, 2, k);
    let metric = MetricSpec::discrete(NormTag::L2, r.random_range(0.1..3.0), k).unwrap();
    let inst = RobustInstance::new(mu, metric, r.random_range(0.0..2.0)).unwrap();
    let losses = (0..n)
        .map(|_| (0..k).map(|_| r.random_range(0.0..4.0)).collect())
        .collect();
    (inst, losses, r.random_range(0.0..2.0))
}

#[test]
fn dual_on_support_equals_primal_lp() {
    for seed in 0..100 {
        let n = 1 + seed as usize % 8;
        let (inst, losses) = finite_instance(seed, n, 20 - n);
        let dual = minimize_dual_on_support(&inst, &losses).unwrap().value;
        let primal = primal_robust_risk_lp(&inst, &losses).unwrap();
        assert!(
            (dual - primal).abs() <= 1e-6 * (1.0 + dual.abs()),
            "seed {seed}: {dual} vs {primal}"
        );
    }
}

#[test]
fn primal_lp_matches_vertex_enumeration_on_small_instances() {
    for seed in 0..40 {
        let (inst, losses) = finite_instance(300 + seed, 2, 1);
        let targets = inst.candidate_targets().unwrap();
        let mu = inst.empirical();
        let (n, m) = (mu.len(), targets.len());
        // variables π_ij for finite costs only
        let mut vars = Vec::new();
        let mut costs = Vec::new();
        for (i, (_, s)) in mu.atoms().enumerate() {
            for (j, t) in targets.points().iter().enumerate() {
                let c = metric_eval(inst.metric(), s, t).unwrap();
                if c.is_finite() {
                    vars.push((i, j));
                    costs.push(c);
                }
            }
        }
        let c: Vec<f64> = vars.iter().map(|&(_, j)| losses[j]).collect();
        let eq: Vec<(Vec<f64>, f64)> = (0..n)
            .map(|i| {
                (
                    vars.iter().map(|&(a, _)| f64::from(a == i)).collect(),
                    mu.weights()[i],
                )
            })
            .collect();
        let le = vec![(costs, inst.rho())];
        let oracle = vertex_enumeration_max(&c, &eq, &le).unwrap();
        let lp = primal_robust_lp(&inst, &losses).unwrap();
        assert!(
            (lp.value - oracle).abs() <= 1e-9,
            "seed {seed}: {} vs {oracle}",
            lp.value
        );
        assert!(lp.transport_used <= inst.rho() + 1e-9);
        assert_eq!(lp.plan.len(), n * m);
    }
}

#[test]
fn breakpoint_minimum_beats_a_fine_lambda_grid() {
    for seed in 0..20 {
        let (inst, losses, bound) = random_label_instance(1000 + seed);
        let program = DualProgram::from_label_losses(&inst, &losses, bound).unwrap();
        let sol = program.minimize().unwrap();
        let hi = program.breakpoints().last().copied().unwrap() * 1.5 + 1.0;
        let points = 100_000;
        let (_, grid) = grid_minimum(|l| program.objective(l), bound, hi, points);
        let max_slope = inst.rho() + inst.metric().kappa() * 1.0;
        let step = (hi - bound) / (points - 1) as f64;
        assert!(sol.value <= grid + 1e-12, "seed {seed}");
        assert!(grid - sol.value <= max_slope * step + 1e-12, "seed {seed}");
        assert!(sol.lambda_star >= bound);
    }
}

#[test]
fn zero_radius_gives_the_empirical_risk() {
    for seed in 0..30 {
        let (inst, losses, bound) = random_label_instance(2000 + seed);
        let inst = inst.with_rho(0.0).unwrap();
        let expected: f64 = inst
            .empirical()
            .atoms()
            .zip(&losses)
            .map(|((w, p), row)| w * row[p.y])
            .sum();
        let v = minimize_dual(&inst, &losses, bound).unwrap().value;
        assert!(
            (v - expected).abs() <= 1e-12 * (1.0 + expected),
            "seed {seed}: {v} vs {expected}"
        );
    }
}

/// Random linear softmax instance in the plane.
fn planar_softmax(seed: u64) -> (RobustInstance, LinearSoftmax) {
    let mut r = rng(seed);
    let k = r.random_range(2..=3);
    let model = LinearSoftmax::random(k, 2, true, &mut r).unwrap();
    let n = r.random_range(2..=5);
    let mu = random_measure(&mut r, n, 2, k);
    let metric = MetricSpec::discrete(NormTag::L2, r.random_range(0.5..2.0), k).unwrap();
    let inst = RobustInstance::new(mu, metric, r.random_range(0.05..0.5)).unwrap();
    (inst, model)
}

#[test]
fn certificate_dominates_nested_grid_oracles() {
    for seed in 0..6 {
        let (inst, model) = planar_softmax(3000 + seed);
        let k = model.label_count();
        let mut gaps = Vec::new();
        for m in [5, 9, 17] {
            let grid = PointSet::with_all_labels(&square_grid(m, -2.0, 2.0), k).unwrap();
            let cert =
                linear_robust_risk(&inst, &model, BoundMode::Certified, Some(&grid)).unwrap();
            assert!(cert.passed(), "seed {seed}: {:?}", cert.verdicts);
            gaps.push(cert.oracle_gap.unwrap());
        }
        assert!(gaps.iter().all(|g| *g >= -1e-9));
        assert!(
            gaps.windows(2).all(|w| w[1] <= w[0] + 1e-9),
            "seed {seed}: {gaps:?}"
        );
    }
}

#[test]
fn above_the_flip_threshold_the_value_is_empirical_plus_rho_bound() {
    for seed in 0..30 {
        let (inst, model) = planar_softmax(4000 + seed);
        let bound = ce_lipschitz_bound(&model, NormTag::L2, BoundMode::Certified).unwrap();
        let losses = label_loss_table(&model, inst.empirical()).unwrap();
        let kappa0 = label_flip_threshold(&inst, &losses, bound)
            .unwrap()
            .expect("bound is positive");
        let kappa = if kappa0 > 0.0 { 2.0 * kappa0 } else { 1.0 };
        let inst = inst.with_kappa(kappa).unwrap();
        let cert = linear_robust_risk(&inst, &model, BoundMode::Certified, None).unwrap();
        let expected = cert.empirical_risk + inst.rho() * bound;
        assert!((cert.robust_value - expected).abs() <= 1e-9, "seed {seed}");
        assert!((cert.lambda_star - bound).abs() <= 1e-12);
    }
}

#[test]
fn label_moves_raise_the_value_below_the_threshold() {
    // two points, the wrong label is much more expensive; a cheap label move must pay off
    let mu = common::uniform(
        PointSet::new(
            vec![
                LabeledPoint::new(vec![1.0, 0.0], 0).unwrap(),
                LabeledPoint::new(vec![-1.0, 0.0], 1).unwrap(),
            ],
            2,
        )
        .unwrap(),
    );
    let model = LinearSoftmax::new(
        wasslip_core::Matrix::from_rows(&[vec![3.0, 0.0], vec![-3.0, 0.0]]).unwrap(),
        None,
    )
    .unwrap();
    let bound = ce_lipschitz_bound(&model, NormTag::L2, BoundMode::Certified).unwrap();
    let inst =
        RobustInstance::new(mu, MetricSpec::discrete(NormTag::L2, 1e-3, 2).unwrap(), 0.5).unwrap();
    let cert = linear_robust_risk(&inst, &model, BoundMode::Certified, None).unwrap();
    assert!(cert.robust_value > cert.empirical_risk + 0.5 * bound + 1.0);
    assert_eq!(cert.active_labels, vec![1, 0]);
}

fn huber(x: &[f64]) -> f64 {
    let a = x[0].abs();
    if a <= 1.0 {
        0.5 * a * a
    } else {
        a - 0.5
    }
}

#[test]
fn penalised_supremum_on_scalar_functions() {
    let cfg = PenalisedSupConfig::default();
    let abs: fn(&[f64]) -> f64 = |x| x[0].abs();
    for (psi, name) in [(abs, "abs"), (huber as fn(&[f64]) -> f64, "huber")] {
        for z in [-1.5, 0.0, 0.3, 2.0] {
            let eq = verify_penalised_sup(psi, 1.0, 1.0, &[z], &cfg).unwrap();
            assert_eq!(eq.branch, SupBranch::Equality);
            assert!(eq.passed, "{name} at {z}: {}", eq.detail);
            let grow = verify_penalised_sup(psi, 1.0, 0.5, &[z], &cfg).unwrap();
            assert_eq!(grow.branch, SupBranch::Growth);
            assert!(grow.passed, "{name} at {z}: {}", grow.detail);
        }
    }
}

#[test]
fn penalised_supremum_on_cross_entropy_slices() {
    for seed in 0..6 {
        let mut r = rng(5000 + seed);
        let model = LinearSoftmax::random(3, 2, true, &mut r).unwrap();
        let tag = TAGS[seed as usize % 3];
        let cfg = PenalisedSupConfig {
            norm: tag,
            ..PenalisedSupConfig::default()
        };
        let z = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        for y in 0..3 {
            let lip = slice_lipschitz(&model, y, tag).unwrap();
            let psi = |x: &[f64]| model.loss(x, y).unwrap();
            let certified = ce_lipschitz_bound(&model, tag, BoundMode::Certified).unwrap();
            assert!(certified >= lip - 1e-12);
            for gamma in [lip, certified] {
                let v = verify_penalised_sup(psi, lip, gamma, &z, &cfg).unwrap();
                assert!(v.passed && v.branch == SupBranch::Equality, "{}", v.detail);
            }
            let v = verify_penalised_sup(psi, lip, 0.5 * lip, &z, &cfg).unwrap();
            assert!(v.passed && v.branch == SupBranch::Growth, "{}", v.detail);
        }
    }
}

#[test]
fn pushforward_of_a_ball_member_stays_in_the_image_ball() {
    for seed in 0..20 {
        let mut r = rng(6000 + seed);
        let k = 2;
        let tag = [NormTag::L2, NormTag::Linf][seed as usize % 2];
        let n = r.random_range(2..=4);
        let mu = random_measure(&mut r, n, 2, k);
        let kappa = r.random_range(0.5..2.0);
        let rho = r.random_range(0.05..0.8);
        let metric = MetricSpec::discrete(tag, kappa, k).unwrap();
        let extra = random_points(&mut r, 6, 2, k, 1.5);
        let inst = RobustInstance::new(mu.clone(), metric.clone(), rho)
            .unwrap()
            .with_targets_and_support(&extra)
            .unwrap();
        let targets = inst.candidate_targets().unwrap().clone();
        let losses: Vec<f64> = (0..targets.len())
            .map(|_| r.random_range(0.0..1.0))
            .collect();
        let plan = primal_robust_lp(&inst, &losses).unwrap();
        let m = targets.len();
        let mut nu_w: Vec<f64> = (0..m)
            .map(|j| (0..n).map(|i| plan.plan[i * m + j]).sum::<f64>().max(0.0))
            .collect();
        let total: f64 = nu_w.iter().sum();
        nu_w.iter_mut().for_each(|w| *w /= total);
        let nu = DiscreteMeasure::new(targets, nu_w).unwrap();
        let costs = CostMatrix::from_metric(&metric, mu.support(), nu.support()).unwrap();
        assert!(transport_cost(&mu, &nu, &costs).unwrap() <= rho + 1e-8);

        let width = r.random_range(2..6);
        let net = Mlp::random(&[2, width, k], Activation::Tanh, true, &mut r).unwrap();
        let lip = feature_lipschitz_bound(&net, tag).unwrap();
        let phi = |p: &LabeledPoint| LabeledPoint::new(net.features(&p.x)?, p.y);
        let (fmu, fnu) = (
            pushforward(&mu, phi).unwrap(),
            pushforward(&nu, phi).unwrap(),
        );
        let feature_metric = MetricSpec::discrete(tag, kappa * lip, k).unwrap();
        let fcosts =
            CostMatrix::from_metric(&feature_metric, fmu.support(), fnu.support()).unwrap();
        let pushed = transport_cost(&fmu, &fnu, &fcosts).unwrap();
        assert!(
            pushed <= lip * rho + 1e-8,
            "seed {seed}: {pushed} > {lip}·{rho}"
        );
    }
}

#[test]
fn pushforward_risk_dominates_input_grid_oracle() {
    for seed in 0..8 {
        let mut r = rng(7000 + seed);
        let k = 2;
        let mu = random_measure(&mut r, 3, 2, k);
        let inst = RobustInstance::new(mu, MetricSpec::discrete(NormTag::L2, 1.0, k).unwrap(), 0.2)
            .unwrap();
        let net = Mlp::random(&[2, 4, k], Activation::Relu, true, &mut r).unwrap();
        let grid = PointSet::with_all_labels(&square_grid(9, -2.0, 2.0), k).unwrap();
        let cert = pushforward_risk(&inst, &net, BoundMode::Certified, Some(&grid)).unwrap();
        assert!(cert.passed(), "seed {seed}: {:?}", cert.verdicts);
        assert!(cert.oracle_value.unwrap() <= cert.robust_value + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn value_is_monotone_in_rho_and_kappa(seed in any::<u64>(), d_rho in 0.0f64..1.0, factor in 1.0f64..4.0) {
        let (inst, losses, bound) = random_label_instance(seed);
        let base = minimize_dual(&inst, &losses, bound).unwrap().value;
        let wider = minimize_dual(&inst.with_rho(inst.rho() + d_rho).unwrap(), &losses, bound).unwrap().value;
        prop_assert!(wider >= base - 1e-12);
        let stiffer = inst.with_kappa(inst.metric().kappa() * factor).unwrap();
        prop_assert!(minimize_dual(&stiffer, &losses, bound).unwrap().value <= base + 1e-12);
        let empirical = empirical_risk(|p| Ok(losses_at(&inst, &losses, p)), inst.empirical()).unwrap();
        prop_assert!(base >= empirical - 1e-12);
    }

    #[test]
    fn dual_objective_is_convex(seed in any::<u64>(), a in 0.0f64..5.0, b in 0.0f64..5.0, t in 0.0f64..=1.0) {
        let (inst, losses, bound) = random_label_instance(seed);
        let program = DualProgram::from_label_losses(&inst, &losses, bound).unwrap();
        let (a, b) = (bound + a, bound + b);
        let mid = program.objective(t * a + (1.0 - t) * b);
        prop_assert!(mid <= t * program.objective(a) + (1.0 - t) * program.objective(b) + 1e-9);
    }

    #[test]
    fn weak_duality_against_restricted_primal(seed in any::<u64>()) {
        let (inst, model) = planar_softmax(seed);
        let k = model.label_count();
        let grid = PointSet::with_all_labels(&square_grid(5, -1.5, 1.5), k).unwrap();
        let restricted = inst.clone().with_targets_and_support(&grid).unwrap();
        let targets = restricted.candidate_targets().unwrap();
        let losses: Vec<f64> = targets.points().iter().map(|p| model.loss(&p.x, p.y).unwrap()).collect();
        let lp = primal_robust_risk_lp(&restricted, &losses).unwrap();
        let finite = minimize_dual_on_support(&restricted, &losses).unwrap().value;
        let cert = linear_robust_risk(&inst, &model, BoundMode::Certified, None).unwrap();
        prop_assert!((lp - finite).abs() <= 1e-6 * (1.0 + lp.abs()));
        prop_assert!(lp <= cert.robust_value + 1e-9);
    }
}

fn losses_at(inst: &RobustInstance, losses: &[Vec<f64>], p: &LabeledPoint) -> f64 {
    let i = inst
        .empirical()
        .support()
        .points()
        .iter()
        .position(|q| q == p)
        .unwrap();
    losses[i][p.y]
}
