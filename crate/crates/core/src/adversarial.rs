//! Adversarial risk under norm-bounded input perturbations and its comparison
//! with the robust risk at radius `ε`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::measures::{
    ball_contains, transport_cost, CostMatrix, DiscreteMeasure, LabeledPoint, PointSet,
};
use crate::models::{BoundMode, Classifier, Mlp};
use crate::numerics::NormTag;
use crate::rng::{derive_seed, stream};
use crate::robust::{
    certify, primal_robust_risk_lp, target_losses, RobustCertificate, RobustInstance,
};
use crate::verdict::{all_passed, Verdict};

/// Slack allowed on `‖δ‖ <= ε` after projection.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub norm: NormTag,
    pub epsilon: f64,
}

impl BallSpec {
    pub fn new(norm: NormTag, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!(
                "epsilon must be finite and nonnegative, got {epsilon}"
            )));
        }
        Ok(Self { norm, epsilon })
    }

    pub fn contains(&self, delta: &[f64]) -> bool {
        self.norm.eval(delta) <= self.epsilon + FEASIBILITY_SLACK
    }

    /// Euclidean-nearest point of the ball (for L2 and L∞; for L1 the
    /// Euclidean projection onto the cross-polytope).
    pub fn project(&self, delta: &mut [f64]) {
        let eps = self.epsilon;
        match self.norm {
            NormTag::Linf => delta.iter_mut().for_each(|d| *d = d.clamp(-eps, eps)),
            NormTag::L2 => {
                let n = NormTag::L2.eval(delta);
                if n > eps {
                    let s = if n > 0.0 { eps / n } else { 0.0 };
                    delta.iter_mut().for_each(|d| *d *= s);
                }
            }
            NormTag::L1 => project_l1(delta, eps),
        }
    }
}

/// Euclidean projection onto `{‖v‖₁ <= r}` by sorting magnitudes.
pub fn project_l1(v: &mut [f64], radius: f64) {
    if NormTag::L1.eval(v) <= radius {
        return;
    }
    if radius <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, m) in mags.iter().enumerate() {
        cumulative += m;
        let t = (cumulative - radius) / (j + 1) as f64;
        if *m > t {
            theta = t;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

/// Steepest-ascent direction of unit norm for the ball's norm.
fn ascent_direction(g: &[f64], norm: NormTag) -> Option<Vec<f64>> {
    match norm {
        NormTag::Linf => {
            let d: Vec<f64> = g
                .iter()
                .map(|v| if *v == 0.0 { 0.0 } else { v.signum() })
                .collect();
            d.iter().any(|v| *v != 0.0).then_some(d)
        }
        NormTag::L2 => {
            let n = NormTag::L2.eval(g);
            (n > 0.0).then(|| g.iter().map(|v| v / n).collect())
        }
        NormTag::L1 => {
            let (j, m) = g.iter().enumerate().fold((0, 0.0), |(bj, bm), (j, v)| {
                if v.abs() > bm {
                    (j, v.abs())
                } else {
                    (bj, bm)
                }
            });
            (m > 0.0).then(|| {
                let mut d = vec![0.0; g.len()];
                d[j] = g[j].signum();
                d
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgsm,
    Pgd,
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default = "default_method")]
    pub method: AttackMethod,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Defaults to `2.5·ε / steps`.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Lattice points per axis in grid mode.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_method() -> AttackMethod {
    AttackMethod::Pgd
}
fn default_steps() -> usize {
    40
}
fn default_restarts() -> usize {
    3
}
fn default_grid_points() -> usize {
    101
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: default_method(),
            steps: default_steps(),
            step_size: None,
            restarts: default_restarts(),
            grid_points: default_grid_points(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn with_method(mut self, method: AttackMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub method: AttackMethod,
    pub ball: BallSpec,
    pub deltas: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    pub clean_losses: Vec<f64>,
    pub losses: Vec<f64>,
    pub seeds: Vec<u64>,
    pub adversarial_risk: f64,
}

fn eval_loss<M: Classifier + ?Sized>(model: &M, x: &[f64], delta: &[f64], y: usize) -> Result<f64> {
    let z: Vec<f64> = x.iter().zip(delta).map(|(a, b)| a + b).collect();
    model.loss(&z, y)
}

/// Best of (start, loss) pairs; earlier wins ties.
struct Best {
    delta: Vec<f64>,
    loss: f64,
}

impl Best {
    fn offer(&mut self, delta: &[f64], loss: f64) {
        if loss > self.loss {
            self.loss = loss;
            self.delta.copy_from_slice(delta);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn ascend<M: Classifier + ?Sized>(
    model: &M,
    x: &[f64],
    y: usize,
    ball: &BallSpec,
    start: Vec<f64>,
    steps: usize,
    step_size: f64,
    best: &mut Best,
) -> Result<()> {
    let mut delta = start;
    ball.project(&mut delta);
    best.offer(&delta, eval_loss(model, x, &delta, y)?);
    for _ in 0..steps {
        let z: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let (_, g) = model.loss_grad_x(&z, y)?;
        let Some(dir) = ascent_direction(&g, ball.norm) else {
            break;
        };
        for (d, s) in delta.iter_mut().zip(&dir) {
            *d += step_size * s;
        }
        ball.project(&mut delta);
        best.offer(&delta, eval_loss(model, x, &delta, y)?);
    }
    Ok(())
}

fn random_start<R: Rng + ?Sized>(dim: usize, ball: &BallSpec, rng: &mut R) -> Vec<f64> {
    let eps = ball.epsilon;
    let mut d: Vec<f64> = (0..dim)
        .map(|_| rng.random_range(-1.0..=1.0) * eps)
        .collect();
    ball.project(&mut d);
    d
}

/// Projected gradient ascent from zero, from each warm start and from
/// `restarts` random starts; returns the best iterate seen.
#[allow(clippy::too_many_arguments)]
pub fn pgd_attack_from<M: Classifier + ?Sized>(
    model: &M,
    x: &[f64],
    y: usize,
    ball: &BallSpec,
    steps: usize,
    step_size: f64,
    restarts: usize,
    seed: u64,
    warm_starts: &[Vec<f64>],
) -> Result<(Vec<f64>, f64)> {
    ensure_dim("attack input", model.input_dim(), x.len())?;
    if steps == 0 || !(step_size > 0.0) {
        return Err(Error::invalid(
            "PGD needs at least one step and a positive step size",
        ));
    }
    let zero = vec![0.0; x.len()];
    let mut best = Best {
        delta: zero.clone(),
        loss: eval_loss(model, x, &zero, y)?,
    };
    if ball.epsilon == 0.0 {
        return Ok((best.delta, best.loss));
    }
    ascend(model, x, y, ball, zero, steps, step_size, &mut best)?;
    for w in warm_starts {
        ensure_dim("warm start", x.len(), w.len())?;
        ascend(model, x, y, ball, w.clone(), steps, step_size, &mut best)?;
    }
    let mut rng = stream(seed, "pgd-restarts");
    for _ in 0..restarts {
        let start = random_start(x.len(), ball, &mut rng);
        ascend(model, x, y, ball, start, steps, step_size, &mut best)?;
    }
    Ok((best.delta, best.loss))
}

pub fn pgd_attack<M: Classifier + ?Sized>(
    model: &M,
    x: &[f64],
    y: usize,
    ball: &BallSpec,
    steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    pgd_attack_from(
        model,
        x,
        y,
        ball,
        steps,
        step_size,
        default_restarts(),
        seed,
        &[],
    )
}

/// One full step along the steepest-ascent direction at `x`.
pub fn fgsm_attack<M: Classifier + ?Sized>(
    model: &M,
    x: &[f64],
    y: usize,
    ball: &BallSpec,
) -> Result<(Vec<f64>, f64)> {
    let (clean, g) = model.loss_grad_x(x, y)?;
    let zero = vec![0.0; x.len()];
    let Some(dir) = ascent_direction(&g, ball.norm) else {
        return Ok((zero, clean));
    };
    let mut delta: Vec<f64> = dir.iter().map(|d| d * ball.epsilon).collect();
    ball.project(&mut delta);
    let loss = eval_loss(model, x, &delta, y)?;
    Ok(if loss >= clean {
        (delta, loss)
    } else {
        (zero, clean)
    })
}

/// Candidate perturbations for grid search in one or two dimensions: a
/// lattice of the bounding box kept inside the ball, the ball's vertices and
/// (for L2) samples of the boundary circle.
pub fn ball_grid(ball: &BallSpec, dim: usize, points_per_axis: usize) -> Result<Vec<Vec<f64>>> {
    if !(1..=2).contains(&dim) {
        return Err(Error::invalid(
            "grid attacks are limited to one or two dimensions",
        ));
    }
    if points_per_axis < 2 {
        return Err(Error::invalid(
            "grid attacks need at least two points per axis",
        ));
    }
    let eps = ball.epsilon;
    let mut out: Vec<Vec<f64>> = crate::data::lattice(points_per_axis, dim, -eps, eps)
        .into_iter()
        .filter(|d| ball.contains(d))
        .collect();
    for k in 0..dim {
        for s in [-1.0, 1.0] {
            let mut v = vec![0.0; dim];
            v[k] = s * eps;
            out.push(v);
        }
    }
    if dim == 2 {
        let samples = 8 * points_per_axis;
        for i in 0..samples {
            let t = std::f64::consts::TAU * i as f64 / samples as f64;
            let mut v = vec![t.cos(), t.sin()];
            let n = ball.norm.eval(&v);
            v.iter_mut().for_each(|c| *c *= eps / n);
            ball.project(&mut v);
            out.push(v);
        }
    }
    Ok(out)
}

/// Exhaustive search over [`ball_grid`] followed by gradient ascent from the
/// best lattice point.
pub fn grid_attack<M: Classifier + ?Sized>(
    model: &M,
    x: &[f64],
    y: usize,
    ball: &BallSpec,
    points_per_axis: usize,
    steps: usize,
    step_size: f64,
) -> Result<(Vec<f64>, f64)> {
    let zero = vec![0.0; x.len()];
    let mut best = Best {
        delta: zero.clone(),
        loss: eval_loss(model, x, &zero, y)?,
    };
    if ball.epsilon == 0.0 {
        return Ok((best.delta, best.loss));
    }
    for d in ball_grid(ball, x.len(), points_per_axis)? {
        best.offer(&d, eval_loss(model, x, &d, y)?);
    }
    if steps > 0 && step_size > 0.0 {
        let start = best.delta.clone();
        ascend(model, x, y, ball, start, steps, step_size / 10.0, &mut best)?;
    }
    Ok((best.delta, best.loss))
}

fn attack_one<M: Classifier + ?Sized>(
    model: &M,
    x: &[f64],
    y: usize,
    ball: &BallSpec,
    config: &AttackConfig,
    seed: u64,
    warm: &[Vec<f64>],
) -> Result<(Vec<f64>, f64)> {
    let step_size = config
        .step_size
        .unwrap_or(2.5 * ball.epsilon / config.steps.max(1) as f64);
    let (mut delta, mut loss) = match config.method {
        AttackMethod::Fgsm => fgsm_attack(model, x, y, ball)?,
        AttackMethod::Pgd => {
            if ball.epsilon == 0.0 {
                let zero = vec![0.0; x.len()];
                let l = model.loss(x, y)?;
                (zero, l)
            } else {
                pgd_attack_from(
                    model,
                    x,
                    y,
                    ball,
                    config.steps,
                    step_size,
                    config.restarts,
                    seed,
                    warm,
                )?
            }
        }
        AttackMethod::Grid => grid_attack(
            model,
            x,
            y,
            ball,
            config.grid_points,
            config.steps,
            step_size,
        )?,
    };
    if config.method != AttackMethod::Pgd {
        for w in warm {
            let mut d = w.clone();
            ball.project(&mut d);
            let l = eval_loss(model, x, &d, y)?;
            if l > loss {
                loss = l;
                delta = d;
            }
        }
    }
    Ok((delta, loss))
}

fn run_attack<M: Classifier + ?Sized>(
    model: &M,
    mu: &DiscreteMeasure,
    ball: &BallSpec,
    config: &AttackConfig,
    warm: Option<&[Vec<Vec<f64>>]>,
) -> Result<AttackResult> {
    let n = mu.len();
    let mut result = AttackResult {
        method: config.method,
        ball: *ball,
        deltas: Vec::with_capacity(n),
        norms: Vec::with_capacity(n),
        clean_losses: Vec::with_capacity(n),
        losses: Vec::with_capacity(n),
        seeds: Vec::with_capacity(n),
        adversarial_risk: 0.0,
    };
    for (i, (w, p)) in mu.atoms().enumerate() {
        let seed = derive_seed(config.seed, &format!("attack-sample-{i}"));
        let starts = warm.map(|w| w[i].as_slice()).unwrap_or(&[]);
        let clean = model.loss(&p.x, p.y)?;
        let (delta, loss) = attack_one(model, &p.x, p.y, ball, config, seed, starts)?;
        result.adversarial_risk += w * loss;
        result.norms.push(ball.norm.eval(&delta));
        result.deltas.push(delta);
        result.clean_losses.push(clean);
        result.losses.push(loss);
        result.seeds.push(seed);
    }
    Ok(result)
}

/// `Σ_i w_i max_{‖δ‖<=ε} ℓ(x_i + δ, y_i)` with the inner maximum found by the
/// configured attack (a lower bound unless the attack is exact).
pub fn adversarial_risk<M: Classifier + ?Sized>(
    model: &M,
    mu: &DiscreteMeasure,
    ball: &BallSpec,
    config: &AttackConfig,
) -> Result<AttackResult> {
    run_attack(model, mu, ball, config, None)
}

/// Attacks at increasing radii. Each radius also starts from the previous
/// radius's perturbation, both as is and rescaled to the new radius, so the
/// reported per-sample losses are nondecreasing in `ε`.
pub fn epsilon_sweep<M: Classifier + ?Sized>(
    model: &M,
    mu: &DiscreteMeasure,
    norm: NormTag,
    epsilons: &[f64],
    config: &AttackConfig,
) -> Result<Vec<AttackResult>> {
    if epsilons.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("epsilon sweep must be nondecreasing"));
    }
    let mut out: Vec<AttackResult> = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let ball = BallSpec::new(norm, eps)?;
        let warm: Option<Vec<Vec<Vec<f64>>>> = out.last().map(|prev| {
            prev.deltas
                .iter()
                .map(|d| {
                    let mut starts = vec![d.clone()];
                    if prev.ball.epsilon > 0.0 {
                        starts.push(d.iter().map(|v| v * eps / prev.ball.epsilon).collect());
                    }
                    starts
                })
                .collect()
        });
        out.push(run_attack(model, mu, &ball, config, warm.as_deref())?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialBoundReport {
    pub ball: BallSpec,
    pub adversarial_risk: f64,
    pub robust_value: f64,
    /// Robust LP over the empirical support and the attacked points.
    pub lp_oracle_value: f64,
    pub max_attack_norm: f64,
    /// Transport cost from the empirical measure to its attacked image.
    pub attack_transport_cost: f64,
    pub attack: AttackResult,
    pub certificate: RobustCertificate,
    pub verdicts: Vec<Verdict>,
}

impl AdversarialBoundReport {
    pub fn passed(&self) -> bool {
        all_passed(&self.verdicts)
    }
}

/// Checks `adversarial risk <= robust risk at ρ = ε` for one model and ball.
///
/// Also moves each atom by its attack (labels fixed), checks that the image
/// measure lies in the transport ball of radius `ε` and that the primal LP
/// over the support plus the attacked points sits between the two sides.
pub fn verify_adversarial_bound(
    model: &Mlp,
    instance: &RobustInstance,
    ball: &BallSpec,
    config: &AttackConfig,
    mode: BoundMode,
) -> Result<AdversarialBoundReport> {
    if instance.metric().x_norm() != ball.norm {
        return Err(Error::invalid(
            "the metric's input norm must match the attack ball",
        ));
    }
    if (instance.rho() - ball.epsilon).abs() > 0.0 {
        return Err(Error::invalid("the radius must equal the attack budget"));
    }
    let mu = instance.empirical();
    let attack = adversarial_risk(model, mu, ball, config)?;
    let certificate = certify(instance, model, mode, None)?;

    let attacked: Vec<LabeledPoint> = mu
        .support()
        .points()
        .iter()
        .zip(&attack.deltas)
        .map(|(p, d)| LabeledPoint::new(p.x.iter().zip(d).map(|(a, b)| a + b).collect(), p.y))
        .collect::<Result<_>>()?;
    let attacked = PointSet::new(attacked, mu.support().label_count())?;
    let image = DiscreteMeasure::new(attacked.clone(), mu.weights().to_vec())?;
    let costs = CostMatrix::from_metric(instance.metric(), mu.support(), &attacked)?;
    let moved = transport_cost(mu, &image, &costs)?;
    let inside = ball_contains(mu, &image, &costs, instance.rho())?;

    let restricted = instance.clone().with_targets_and_support(&attacked)?;
    let losses = target_losses(model, restricted.candidate_targets().expect("targets set"))?;
    let lp = primal_robust_risk_lp(&restricted, &losses)?;

    let max_attack_norm = attack.norms.iter().copied().fold(0.0, f64::max);
    let robust = certificate.robust_value;
    let adv = attack.adversarial_risk;
    let verdicts = vec![
        Verdict::le(
            "attacks stay inside the ball",
            max_attack_norm,
            ball.epsilon,
            FEASIBILITY_SLACK,
        ),
        Verdict::le("adversarial risk below robust value", adv, robust, 1e-8),
        Verdict::new(
            "attacked measure inside the transport ball",
            inside,
            format!(
                "transport cost {moved:.17e}, radius {:.17e}",
                instance.rho()
            ),
        ),
        Verdict::le(
            "adversarial risk below LP oracle",
            adv,
            lp,
            1e-9 * (1.0 + adv.abs()),
        ),
        Verdict::le("LP oracle below robust value", lp, robust, 1e-8),
    ];
    Ok(AdversarialBoundReport {
        ball: *ball,
        adversarial_risk: adv,
        robust_value: robust,
        lp_oracle_value: lp,
        max_attack_norm,
        attack_transport_cost: moved,
        attack,
        certificate,
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::empirical_from_samples;
    use crate::models::LinearSoftmax;
    use crate::numerics::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projections() {
        let ball = BallSpec::new(NormTag::L2, 1.0).unwrap();
        let mut v = vec![3.0, 4.0];
        ball.project(&mut v);
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);

        let ball = BallSpec::new(NormTag::Linf, 0.5).unwrap();
        let mut v = vec![3.0, -0.2];
        ball.project(&mut v);
        assert_eq!(v, vec![0.5, -0.2]);

        let mut v = vec![2.0, 1.0, -0.5];
        project_l1(&mut v, 1.0);
        assert!((NormTag::L1.eval(&v) - 1.0).abs() < 1e-12);
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && v[2] == 0.0);

        let mut v = vec![0.3, -0.3];
        project_l1(&mut v, 1.0);
        assert_eq!(v, vec![0.3, -0.3]);
    }

    #[test]
    fn zero_budget_returns_clean_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = LinearSoftmax::random(3, 2, true, &mut rng).unwrap();
        let ball = BallSpec::new(NormTag::L2, 0.0).unwrap();
        let (d, l) = pgd_attack(&model, &[0.3, -0.1], 1, &ball, 40, 0.1, 0).unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
        assert_eq!(l, model.loss(&[0.3, -0.1], 1).unwrap());
    }

    #[test]
    fn binary_linear_linf_matches_sign_corner() {
        let w = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![-0.5, 1.0, 1.5]]).unwrap();
        let model = LinearSoftmax::new(w, None).unwrap();
        let x = [0.2, 0.1, -0.3];
        let ball = BallSpec::new(NormTag::Linf, 0.1).unwrap();
        let (_, fgsm) = fgsm_attack(&model, &x, 0, &ball).unwrap();
        let (_, pgd) = pgd_attack(&model, &x, 0, &ball, 40, 2.5 * 0.1 / 40.0, 1).unwrap();
        assert!((fgsm - pgd).abs() < 1e-6);
        let mut corner_best = f64::NEG_INFINITY;
        for mask in 0..8u32 {
            let d: Vec<f64> = (0..3)
                .map(|i| if mask >> i & 1 == 1 { 0.1 } else { -0.1 })
                .collect();
            corner_best = corner_best.max(eval_loss(&model, &x, &d, 0).unwrap());
        }
        assert!((fgsm - corner_best).abs() < 1e-12);
    }

    #[test]
    fn sweep_is_monotone_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model =
            Mlp::random(&[2, 6, 3], crate::models::Activation::Tanh, true, &mut rng).unwrap();
        let pts = PointSet::new(
            (0..5)
                .map(|i| LabeledPoint::new(vec![i as f64 * 0.3 - 0.6, 0.2], i % 3).unwrap())
                .collect(),
            3,
        )
        .unwrap();
        let mu = empirical_from_samples(pts).unwrap();
        let eps = [0.0, 0.05, 0.2, 0.5];
        let sweep =
            epsilon_sweep(&model, &mu, NormTag::L1, &eps, &AttackConfig::default()).unwrap();
        for pair in sweep.windows(2) {
            for (a, b) in pair[0].losses.iter().zip(&pair[1].losses) {
                assert!(b >= a);
            }
        }
        for r in &sweep {
            assert!(r.deltas.iter().all(|d| r.ball.contains(d)));
        }
    }
}
