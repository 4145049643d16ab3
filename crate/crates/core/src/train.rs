//! Gradient descent on empirical risk plus a Lipschitz penalty whose weight is
//! fixed by the radius and the loss's Lipschitz constant in the logits.
//!
//! With `c = lips(ℓ)` in the logits, `σ_j = ⦀W_j⦀₂` and `l` linear layers:
//!
//! ```text
//! DualLinear   ρ·c·σ_1                      (a single linear layer)
//! Product      ρ·c·Π_j σ_j
//! Spectral     (ρ·c / l)·Σ_j σ_j^l
//! ```
//!
//! Penalties use the spectral norm; their subgradients come from the top
//! singular pair `u_j v_jᵀ` of each layer.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{empirical_from_samples, MetricSpec, PointSet};
use crate::models::{
    logit_loss_lipschitz, mlp_backprop, network_lipschitz_bound, BoundMode, Classifier, Mlp,
};
use crate::numerics::{
    power_iteration, power_iteration_from, second_singular_value, Matrix, NormTag, PowerIteration,
    DEFAULT_MAX_ITERS, DEFAULT_TOL,
};
use crate::rng::stream;
use crate::robust::{certify, RobustCertificate, RobustInstance};
use crate::verdict::extended_f64;

/// Below this gap between the two largest singular values the spectral-norm
/// subgradient is taken as zero.
pub const SIGMA_GAP: f64 = 1e-8;
/// Objectives above this value abort training.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;
pub const MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    DualLinear,
    Product,
    Spectral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub rho: f64,
    #[serde(with = "extended_f64", default = "default_kappa")]
    pub kappa: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Full batch when absent.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub momentum: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    /// Rescale every layer to spectral norm at most this value after each step.
    #[serde(default)]
    pub lipschitz_cap: Option<f64>,
    #[serde(default)]
    pub bound_mode: BoundMode,
}

fn default_kappa() -> f64 {
    f64::INFINITY
}
fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(objective: ObjectiveKind, rho: f64, learning_rate: f64, epochs: usize) -> Self {
        Self {
            objective,
            rho,
            kappa: default_kappa(),
            learning_rate,
            epochs,
            batch_size: None,
            momentum: false,
            seed: 0,
            warm_start: true,
            lipschitz_cap: None,
            bound_mode: BoundMode::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::invalid(format!(
                "rho must be finite and nonnegative, got {}",
                self.rho
            )));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::invalid(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch size must be positive"));
        }
        if let Some(cap) = self.lipschitz_cap {
            if !(cap > 0.0) {
                return Err(Error::invalid("Lipschitz cap must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-layer warm-start vectors for the power iterations.
#[derive(Clone, Debug, Default)]
pub struct PenaltyState {
    starts: Vec<Option<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub erm: f64,
    pub penalty: f64,
    /// Gradient in the layout of [`Mlp::params`].
    pub grad: Vec<f64>,
}

fn check_compatible(model: &Mlp, objective: ObjectiveKind) -> Result<()> {
    if objective == ObjectiveKind::DualLinear && !model.hidden().is_empty() {
        return Err(Error::IncompatibleObjective {
            objective,
            reason: "the linear dual penalty needs a model without hidden layers".into(),
        });
    }
    Ok(())
}

fn spectral(w: &Matrix, start: Option<&[f64]>) -> Result<PowerIteration> {
    match start {
        Some(s) => power_iteration_from(w, s, DEFAULT_MAX_ITERS, DEFAULT_TOL),
        None => power_iteration(w, DEFAULT_MAX_ITERS, DEFAULT_TOL),
    }
}

/// Penalty value and, per layer, the coefficient multiplying `u_j v_jᵀ` in its
/// subgradient (zero where the top singular value is not isolated).
pub fn penalty_terms(
    model: &Mlp,
    objective: ObjectiveKind,
    rho: f64,
    mode: BoundMode,
    state: Option<&mut PenaltyState>,
) -> Result<(f64, Vec<(f64, PowerIteration)>)> {
    check_compatible(model, objective)?;
    let weights = model.weights();
    let l = weights.len();
    let mut fresh = PenaltyState::default();
    let state = state.unwrap_or(&mut fresh);
    state.starts.resize(l, None);
    let mut pis = Vec::with_capacity(l);
    for (j, w) in weights.iter().enumerate() {
        let pi = spectral(w, state.starts[j].as_deref())?;
        state.starts[j] = (pi.sigma > 0.0).then(|| pi.v.as_slice().to_vec());
        pis.push(pi);
    }
    let sigmas: Vec<f64> = pis.iter().map(|p| p.sigma).collect();
    let c = rho * logit_loss_lipschitz(NormTag::L2, mode);
    let (value, coefs): (f64, Vec<f64>) = match objective {
        ObjectiveKind::DualLinear | ObjectiveKind::Product => {
            let value = c * sigmas.iter().product::<f64>();
            let coefs = (0..l)
                .map(|j| {
                    c * sigmas
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != j)
                        .map(|(_, s)| s)
                        .product::<f64>()
                })
                .collect();
            (value, coefs)
        }
        ObjectiveKind::Spectral => {
            let value = c / l as f64 * sigmas.iter().map(|s| s.powi(l as i32)).sum::<f64>();
            let coefs = sigmas.iter().map(|s| c * s.powi(l as i32 - 1)).collect();
            (value, coefs)
        }
    };
    let mut terms = Vec::with_capacity(l);
    for ((w, pi), coef) in weights.iter().zip(pis).zip(coefs) {
        let isolated = pi.sigma > 0.0
            && pi.sigma - second_singular_value(w, &pi, DEFAULT_MAX_ITERS, DEFAULT_TOL)?
                >= SIGMA_GAP;
        terms.push((if isolated { coef } else { 0.0 }, pi));
    }
    Ok((value, terms))
}

fn erm_and_grad(model: &Mlp, data: &PointSet, indices: &[usize]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.num_params()];
    let mut erm = 0.0;
    let scale = 1.0 / indices.len() as f64;
    for &i in indices {
        let p = data.get(i);
        let e = mlp_backprop(model, &p.x, p.y)?;
        erm += scale * e.value;
        grad.iter_mut()
            .zip(&e.grad_params)
            .for_each(|(g, d)| *g += scale * d);
    }
    Ok((erm, grad))
}

fn objective_on(
    model: &Mlp,
    data: &PointSet,
    indices: &[usize],
    config: &TrainConfig,
    state: Option<&mut PenaltyState>,
) -> Result<ObjectiveEval> {
    check_compatible(model, config.objective)?;
    let (erm, mut grad) = erm_and_grad(model, data, indices)?;
    // at zero radius the penalty is skipped entirely so every objective
    // follows the plain empirical-risk trajectory bit for bit
    let penalty = if config.rho == 0.0 {
        0.0
    } else {
        let (penalty, terms) = penalty_terms(
            model,
            config.objective,
            config.rho,
            config.bound_mode,
            state,
        )?;
        for (offset, (coef, pi)) in model.weight_offsets().into_iter().zip(terms) {
            if coef == 0.0 {
                continue;
            }
            let (u, v) = (pi.u.as_slice(), pi.v.as_slice());
            for (r, ur) in u.iter().enumerate() {
                for (c, vc) in v.iter().enumerate() {
                    grad[offset + r * v.len() + c] += coef * ur * vc;
                }
            }
        }
        penalty
    };
    Ok(ObjectiveEval {
        value: erm + penalty,
        erm,
        penalty,
        grad,
    })
}

/// Full-data objective and its (sub)gradient.
pub fn objective_and_grad(
    model: &Mlp,
    data: &PointSet,
    config: &TrainConfig,
) -> Result<ObjectiveEval> {
    let all: Vec<usize> = (0..data.len()).collect();
    objective_on(model, data, &all, config, None)
}

/// `W` rescaled to spectral norm `cap` when it exceeds it.
pub fn project_layer_lipschitz(w: &Matrix, cap: f64) -> Result<Matrix> {
    if !(cap > 0.0) {
        return Err(Error::invalid(format!("cap must be positive, got {cap}")));
    }
    let sigma = power_iteration(w, DEFAULT_MAX_ITERS, DEFAULT_TOL)?.sigma;
    Ok(if sigma > cap {
        w.scaled(cap / sigma)
    } else {
        w.clone()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub erm: f64,
    pub penalty: f64,
    pub objective: f64,
    pub product_bound: f64,
    pub young_bound: f64,
    /// `Σ_j ⦀W_j⦀₂^l`.
    pub spectral_sum: f64,
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainStatus {
    Completed,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub status: TrainStatus,
    /// Epoch 0 is the initial model.
    pub epochs: Vec<EpochRecord>,
    pub certificate: Option<RobustCertificate>,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("report holds the initial epoch")
    }

    /// `epoch,erm,penalty,objective,product_bound,young_bound` rows.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from(
            "epoch,erm,penalty,objective,product_bound,young_bound,spectral_sum,accuracy\n",
        );
        for e in &self.epochs {
            let f = crate::numerics::fmt_f64;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.epoch,
                f(e.erm),
                f(e.penalty),
                f(e.objective),
                f(e.product_bound),
                f(e.young_bound),
                f(e.spectral_sum),
                f(e.accuracy)
            ));
        }
        out
    }
}

pub fn accuracy(model: &Mlp, data: &PointSet) -> Result<f64> {
    let mut hits = 0;
    for p in data.points() {
        if model.predict(&p.x)? == p.y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

fn record(model: &Mlp, data: &PointSet, config: &TrainConfig, epoch: usize) -> Result<EpochRecord> {
    let all: Vec<usize> = (0..data.len()).collect();
    let (erm, _) = erm_and_grad(model, data, &all)?;
    let penalty = if config.rho == 0.0 {
        0.0
    } else {
        penalty_terms(model, config.objective, config.rho, config.bound_mode, None)?.0
    };
    let bounds = network_lipschitz_bound(model, NormTag::L2)?;
    let l = bounds.layer_norms.len() as i32;
    Ok(EpochRecord {
        epoch,
        erm,
        penalty,
        objective: erm + penalty,
        product_bound: bounds.product,
        young_bound: bounds.young,
        spectral_sum: bounds.layer_norms.iter().map(|s| s.powi(l)).sum(),
        accuracy: accuracy(model, data)?,
    })
}

fn diverged(v: f64) -> bool {
    !v.is_finite() || v > DIVERGENCE_THRESHOLD
}

/// Deterministic (momentum) gradient descent. Stops early with status
/// `Diverged` when the objective exceeds [`DIVERGENCE_THRESHOLD`]; otherwise
/// finishes with a robust certificate for the trained model on the training
/// data under the spectral norm.
pub fn train_loop(model: &mut Mlp, data: &PointSet, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    check_compatible(model, config.objective)?;
    if model.input_dim() != data.dim() || model.label_count() < data.label_count() {
        return Err(Error::invalid("model shape does not fit the dataset"));
    }
    let started = Instant::now();
    let n = data.len();
    let batch = config.batch_size.unwrap_or(n).min(n);
    let mut state = PenaltyState::default();
    let mut velocity = vec![0.0; model.num_params()];
    let mut epochs = vec![record(model, data, config, 0)?];
    let mut status = TrainStatus::Completed;

    'outer: for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if batch < n {
            order.shuffle(&mut stream(config.seed, &format!("epoch-{epoch}")));
        }
        for chunk in order.chunks(batch) {
            let warm = config.warm_start.then_some(&mut state);
            let eval = objective_on(model, data, chunk, config, warm)?;
            if diverged(eval.value) {
                status = TrainStatus::Diverged;
                break 'outer;
            }
            let mut params = model.params();
            for ((p, g), v) in params.iter_mut().zip(&eval.grad).zip(&mut velocity) {
                *v = if config.momentum {
                    MOMENTUM * *v + g
                } else {
                    *g
                };
                *p -= config.learning_rate * *v;
            }
            if params.iter().any(|p| !p.is_finite()) {
                status = TrainStatus::Diverged;
                break 'outer;
            }
            model.set_params(&params)?;
            if let Some(cap) = config.lipschitz_cap {
                for j in 0..model.depth() {
                    let projected = project_layer_lipschitz(model.weights()[j], cap)?;
                    *model.weight_mut(j) = projected;
                }
            }
        }
        let rec = record(model, data, config, epoch)?;
        let bad = diverged(rec.objective);
        epochs.push(rec);
        if bad {
            status = TrainStatus::Diverged;
            break;
        }
    }

    let certificate = if status == TrainStatus::Completed {
        let mu = empirical_from_samples(data.clone())?;
        let metric = MetricSpec::discrete(NormTag::L2, config.kappa, model.label_count())?;
        let instance = RobustInstance::new(mu, metric, config.rho)?;
        Some(certify(&instance, model, config.bound_mode, None)?)
    } else {
        None
    };
    Ok(TrainReport {
        config: config.clone(),
        status,
        epochs,
        certificate,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::LabeledPoint;
    use crate::models::{Activation, LinearSoftmax};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> PointSet {
        let pts = (0..8)
            .map(|i| {
                let y = i % 2;
                let s = if y == 0 { -1.0 } else { 1.0 };
                LabeledPoint::new(vec![s + 0.1 * i as f64, s * 0.5], y).unwrap()
            })
            .collect();
        PointSet::new(pts, 2).unwrap()
    }

    #[test]
    fn zero_weights_have_zero_penalty_and_gradient() {
        let head = LinearSoftmax::new(Matrix::zeros(2, 2), None).unwrap();
        let model = Mlp::linear(head);
        for kind in [
            ObjectiveKind::DualLinear,
            ObjectiveKind::Product,
            ObjectiveKind::Spectral,
        ] {
            let cfg = TrainConfig::new(kind, 0.7, 0.1, 1);
            let (value, terms) =
                penalty_terms(&model, kind, 0.7, BoundMode::Certified, None).unwrap();
            assert_eq!(value, 0.0);
            assert!(terms.iter().all(|(c, _)| *c == 0.0));
            let e = objective_and_grad(&model, &toy(), &cfg).unwrap();
            assert_eq!(e.value, e.erm);
        }
    }

    #[test]
    fn dual_linear_rejects_deep_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Mlp::random(&[2, 3, 2], Activation::Relu, true, &mut rng).unwrap();
        let cfg = TrainConfig::new(ObjectiveKind::DualLinear, 0.1, 0.1, 1);
        assert!(matches!(
            objective_and_grad(&model, &toy(), &cfg),
            Err(Error::IncompatibleObjective { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let w = Matrix::identity(3).scaled(2.0);
        let p = project_layer_lipschitz(&w, 1.0).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-9);
        let half = Matrix::identity(2).scaled(0.5);
        assert_eq!(project_layer_lipschitz(&half, 1.0).unwrap(), half);
        assert!(project_layer_lipschitz(&half, 0.0).is_err());
    }

    #[test]
    fn training_is_deterministic_and_decomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let init = Mlp::random(&[2, 4, 2], Activation::Tanh, true, &mut rng).unwrap();
        let mut cfg = TrainConfig::new(ObjectiveKind::Spectral, 0.3, 0.05, 5);
        cfg.batch_size = Some(3);
        cfg.momentum = true;
        let (mut a, mut b) = (init.clone(), init);
        let ra = train_loop(&mut a, &toy(), &cfg).unwrap();
        let rb = train_loop(&mut b, &toy(), &cfg).unwrap();
        assert_eq!(ra.epochs, rb.epochs);
        assert_eq!(a, b);
        for e in &ra.epochs {
            assert!((e.objective - (e.erm + e.penalty)).abs() <= 1e-9);
        }
        assert_eq!(ra.status, TrainStatus::Completed);
        assert!(ra.certificate.is_some());
    }

    #[test]
    fn cap_mode_bounds_every_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = Mlp::random(&[2, 5, 2], Activation::Relu, true, &mut rng).unwrap();
        let mut cfg = TrainConfig::new(ObjectiveKind::Product, 0.0, 0.5, 4);
        cfg.lipschitz_cap = Some(1.0);
        train_loop(&mut model, &toy(), &cfg).unwrap();
        for w in model.weights() {
            assert!(
                power_iteration(w, DEFAULT_MAX_ITERS, DEFAULT_TOL)
                    .unwrap()
                    .sigma
                    <= 1.0 + 1e-9
            );
        }
    }

    #[test]
    fn divergence_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = Mlp::random(&[2, 4, 2], Activation::Identity, false, &mut rng).unwrap();
        let cfg = TrainConfig::new(ObjectiveKind::Spectral, 50.0, 1e6, 50);
        let report = train_loop(&mut model, &toy(), &cfg).unwrap();
        assert_eq!(report.status, TrainStatus::Diverged);
        assert!(report.certificate.is_none());
    }
}
