//! The one-dimensional dual of the robust risk over a transport-cost ball.
//!
//! For fixed data the dual objective is
//!
//! ```text
//! g(λ) = λρ + Σ_i w_i · max_j (a_ij − λ c_ij),    λ >= L
//! ```
//!
//! where each sample `i` contributes a finite family of lines. With the
//! Lipschitz collapse `x' = x_i`, the lines are indexed by labels:
//! `a_ij = ℓ(x_i, j)` and `c_ij = κ·d_Y(j, y_i)`, and `L` bounds the loss's
//! Lipschitz constant in `x`. Over an explicit finite target set the lines are
//! `a_ij = ℓ(t_j)`, `c_ij = d(s_i, t_j)` and `L = 0`.
//!
//! `g` is convex and piecewise linear, so its minimum over `[L, ∞)` sits at `L`
//! or at a crossing of two lines of the same sample.

use serde::{Deserialize, Serialize};

use super::RobustInstance;
use crate::error::{ensure_dim, Error, Result};
use crate::measures::{metric_eval, MetricSpec};

/// Above this many candidate breakpoints the minimiser switches to ternary search.
pub const MAX_BREAKPOINTS: usize = 100_000;

#[derive(Clone, Copy, Debug)]
struct Line {
    intercept: f64,
    slope: f64,
    label: usize,
    target: usize,
}

impl Line {
    fn at(&self, lambda: f64) -> f64 {
        self.intercept - lambda * self.slope
    }
}

#[derive(Clone, Debug)]
pub struct DualProgram {
    weights: Vec<f64>,
    lines: Vec<Vec<Line>>,
    rho: f64,
    lower: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda_star: f64,
    pub value: f64,
    /// Per-sample envelope values `l_i` at `λ*`.
    pub envelopes: Vec<f64>,
    /// Per-sample maximising label at `λ*`.
    pub active_labels: Vec<usize>,
    /// Per-sample maximising target index (equal to the label in label mode).
    pub active_targets: Vec<usize>,
    /// Lower end `L` of the feasible λ range.
    pub lipschitz_bound: f64,
    pub candidates_examined: usize,
}

/// `sup_{y'} ( ℓ(x_i, y') − λκ d_Y(y', y_i) )` by enumeration; ties go to the
/// smallest label. Labels at infinite cost (κ = ∞) are never selected.
pub fn inner_label_sup(
    losses: &[f64],
    y_i: usize,
    lambda: f64,
    metric: &MetricSpec,
) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, y_i);
    for (y, l) in losses.iter().enumerate() {
        let cost = metric.label_cost(y, y_i);
        if !cost.is_finite() {
            continue;
        }
        let v = l - lambda * cost;
        if v > best.0 {
            best = (v, y);
        }
    }
    best
}

impl DualProgram {
    /// Label-indexed dual: `losses[i][y]` is `ℓ(x_i, y)`, `lipschitz_bound`
    /// bounds `lips(ℓ_{f,y})` uniformly over labels.
    pub fn from_label_losses(
        instance: &RobustInstance,
        losses: &[Vec<f64>],
        lipschitz_bound: f64,
    ) -> Result<Self> {
        let mu = &instance.empirical;
        ensure_dim("loss table rows", mu.len(), losses.len())?;
        if lipschitz_bound.is_nan() || lipschitz_bound < 0.0 {
            return Err(Error::invalid(format!(
                "Lipschitz bound must be nonnegative, got {lipschitz_bound}"
            )));
        }
        let k = instance.metric.label_count();
        let mut lines = Vec::with_capacity(mu.len());
        for (i, ((_, p), row)) in mu.atoms().zip(losses).enumerate() {
            ensure_dim("loss table columns", k, row.len())?;
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "loss table",
                    index: i * k + j,
                });
            }
            lines.push(
                row.iter()
                    .enumerate()
                    .filter_map(|(y, l)| {
                        let c = instance.metric.label_cost(y, p.y);
                        c.is_finite().then_some(Line {
                            intercept: *l,
                            slope: c,
                            label: y,
                            target: y,
                        })
                    })
                    .collect(),
            );
        }
        Ok(Self {
            weights: mu.weights().to_vec(),
            lines,
            rho: instance.rho,
            lower: lipschitz_bound,
        })
    }

    /// Finite-support dual over the instance's candidate targets with
    /// `target_losses[j] = ℓ(t_j)`.
    pub fn finite_support(instance: &RobustInstance, target_losses: &[f64]) -> Result<Self> {
        let targets = instance
            .candidate_targets
            .as_ref()
            .ok_or_else(|| Error::invalid("finite-support dual needs candidate targets"))?;
        ensure_dim("target losses", targets.len(), target_losses.len())?;
        crate::error::ensure_finite("target losses", target_losses)?;
        let mu = &instance.empirical;
        let mut lines = Vec::with_capacity(mu.len());
        for (_, s) in mu.atoms() {
            let mut row = Vec::with_capacity(targets.len());
            for (j, t) in targets.points().iter().enumerate() {
                let c = metric_eval(&instance.metric, s, t)?;
                if c.is_finite() {
                    row.push(Line {
                        intercept: target_losses[j],
                        slope: c,
                        label: t.y,
                        target: j,
                    });
                }
            }
            if row.is_empty() {
                return Err(Error::Infeasible(
                    "a sample cannot reach any target at finite cost".into(),
                ));
            }
            lines.push(row);
        }
        Ok(Self {
            weights: mu.weights().to_vec(),
            lines,
            rho: instance.rho,
            lower: 0.0,
        })
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower
    }

    fn envelope(lines: &[Line], lambda: f64) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (j, l) in lines.iter().enumerate() {
            let v = l.at(lambda);
            if v > best.0 {
                best = (v, j);
            }
        }
        best
    }

    /// `g(λ)`, or `+∞` when `λ` is below the Lipschitz bound.
    pub fn objective(&self, lambda: f64) -> f64 {
        if lambda.is_nan() || lambda < self.lower {
            return f64::INFINITY;
        }
        let mut total = lambda * self.rho;
        for (w, lines) in self.weights.iter().zip(&self.lines) {
            total += w * Self::envelope(lines, lambda).0;
        }
        total
    }

    /// Slope of `g` as `λ → ∞`.
    fn tail_slope(&self) -> f64 {
        self.rho
            - self
                .weights
                .iter()
                .zip(&self.lines)
                .map(|(w, lines)| w * lines.iter().map(|l| l.slope).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
    }

    fn breakpoint_count(&self) -> usize {
        self.lines
            .iter()
            .map(|l| l.len() * l.len().saturating_sub(1) / 2)
            .sum()
    }

    fn for_each_breakpoint(&self, mut visit: impl FnMut(f64)) {
        for lines in &self.lines {
            for (a, la) in lines.iter().enumerate() {
                for lb in &lines[a + 1..] {
                    let ds = la.slope - lb.slope;
                    if ds != 0.0 {
                        let lambda = (la.intercept - lb.intercept) / ds;
                        if lambda.is_finite() && lambda > self.lower {
                            visit(lambda);
                        }
                    }
                }
            }
        }
    }

    /// Candidate minimisers: `L` and every crossing above it, sorted.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![self.lower];
        self.for_each_breakpoint(|l| out.push(l));
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    pub fn solution_at(&self, lambda: f64, candidates_examined: usize) -> DualSolution {
        let mut envelopes = Vec::with_capacity(self.lines.len());
        let mut active_labels = Vec::with_capacity(self.lines.len());
        let mut active_targets = Vec::with_capacity(self.lines.len());
        let mut value = lambda * self.rho;
        for (w, lines) in self.weights.iter().zip(&self.lines) {
            let (v, j) = Self::envelope(lines, lambda);
            value += w * v;
            envelopes.push(v);
            active_labels.push(lines[j].label);
            active_targets.push(lines[j].target);
        }
        DualSolution {
            lambda_star: lambda,
            value,
            envelopes,
            active_labels,
            active_targets,
            lipschitz_bound: self.lower,
            candidates_examined,
        }
    }

    /// Exact minimiser by breakpoint enumeration; ternary search on
    /// `[L, largest crossing]` when there are more than [`MAX_BREAKPOINTS`].
    pub fn minimize(&self) -> Result<DualSolution> {
        if self.tail_slope() < 0.0 {
            return Err(Error::Infeasible(
                "radius below the cheapest transport of the empirical measure".into(),
            ));
        }
        if self.breakpoint_count() <= MAX_BREAKPOINTS {
            let candidates = self.breakpoints();
            let mut best = (f64::INFINITY, self.lower);
            for &lambda in &candidates {
                let v = self.objective(lambda);
                if v < best.0 {
                    best = (v, lambda);
                }
            }
            return Ok(self.solution_at(best.1, candidates.len()));
        }

        let mut hi = self.lower;
        self.for_each_breakpoint(|l| hi = hi.max(l));
        let (mut a, mut b) = (self.lower, hi);
        let mut evaluations = 0;
        for _ in 0..300 {
            if b - a <= 1e-14 * (1.0 + b.abs()) {
                break;
            }
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            evaluations += 2;
            if self.objective(m1) <= self.objective(m2) {
                b = m2;
            } else {
                a = m1;
            }
        }
        let mid = 0.5 * (a + b);
        let best = [self.lower, mid, hi]
            .into_iter()
            .min_by(|x, y| self.objective(*x).total_cmp(&self.objective(*y)))
            .unwrap();
        Ok(self.solution_at(best, evaluations + 3))
    }
}

/// Dual objective at `λ` for a label-indexed loss table.
pub fn dual_objective(
    instance: &RobustInstance,
    losses: &[Vec<f64>],
    lipschitz_bound: f64,
    lambda: f64,
) -> Result<f64> {
    Ok(DualProgram::from_label_losses(instance, losses, lipschitz_bound)?.objective(lambda))
}

/// Minimise the label-indexed dual over `λ >= lipschitz_bound`.
pub fn minimize_dual(
    instance: &RobustInstance,
    losses: &[Vec<f64>],
    lipschitz_bound: f64,
) -> Result<DualSolution> {
    DualProgram::from_label_losses(instance, losses, lipschitz_bound)?.minimize()
}

/// Minimise the finite-support dual over the instance's candidate targets.
pub fn minimize_dual_on_support(
    instance: &RobustInstance,
    target_losses: &[f64],
) -> Result<DualSolution> {
    DualProgram::finite_support(instance, target_losses)?.minimize()
}

/// Smallest κ₀ such that for every `κ > κ₀` the label supremum at `λ = L`
/// keeps every sample's own label, so the dual collapses to
/// `empirical risk + ρ·L`. `None` when no finite κ works (`L = 0` with a
/// label that strictly beats the true one).
pub fn label_flip_threshold(
    instance: &RobustInstance,
    losses: &[Vec<f64>],
    lipschitz_bound: f64,
) -> Result<Option<f64>> {
    let mu = &instance.empirical;
    ensure_dim("loss table rows", mu.len(), losses.len())?;
    let metric = &instance.metric;
    let mut kappa0: f64 = 0.0;
    for ((_, p), row) in mu.atoms().zip(losses) {
        for (y, l) in row.iter().enumerate() {
            if y == p.y {
                continue;
            }
            let gap = l - row[p.y];
            if gap <= 0.0 {
                continue;
            }
            if lipschitz_bound <= 0.0 {
                return Ok(None);
            }
            kappa0 = kappa0.max(gap / (lipschitz_bound * metric.label_distance(y, p.y)));
        }
    }
    Ok(Some(kappa0))
}
