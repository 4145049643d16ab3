//! Dense two-phase simplex with Bland's anti-cycling rule.
//!
//! Problems are stated as
//!
//! ```text
//! maximise    cᵀx
//! subject to  A_eq x  = b_eq
//!             A_le x <= b_le
//!             x >= 0
//! ```
//!
//! The instances this crate needs (transport polytopes, restricted robust-risk
//! programs) have at most a few thousand columns and a few dozen rows, so the
//! full tableau is kept in memory.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};

/// Constraint satisfaction tolerance reported by [`LpSolution`].
pub const FEASIBILITY_TOL: f64 = 1e-9;
const REDUCED_COST_TOL: f64 = 1e-11;
const PIVOT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Default)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub eq_constraints: Vec<(Vec<f64>, f64)>,
    pub le_constraints: Vec<(Vec<f64>, f64)>,
}

impl LpProblem {
    pub fn maximize(objective: Vec<f64>) -> Self {
        Self {
            objective,
            ..Self::default()
        }
    }

    pub fn eq(mut self, row: Vec<f64>, rhs: f64) -> Self {
        self.eq_constraints.push((row, rhs));
        self
    }

    pub fn le(mut self, row: Vec<f64>, rhs: f64) -> Self {
        self.le_constraints.push((row, rhs));
        self
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Largest violation of any constraint (including `x >= 0`) at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |m, v| m.max(-v));
        for (row, rhs) in &self.eq_constraints {
            worst = worst.max((dot(row, x) - rhs).abs());
        }
        for (row, rhs) in &self.le_constraints {
            worst = worst.max(dot(row, x) - rhs);
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal value; `-inf` when infeasible and `+inf` when unbounded.
    pub value: f64,
    pub point: Vec<f64>,
    pub pivots: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Tableau {
    rows: usize,
    width: usize,
    cells: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
    max_pivots: usize,
}

enum Phase {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn row(&self, r: usize) -> &[f64] {
        &self.cells[r * self.width..(r + 1) * self.width]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.cells[r * self.width + self.width - 1]
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.width + c]
    }

    fn pivot(&mut self, r: usize, c: usize, objective: &mut [f64]) {
        let w = self.width;
        let p = self.at(r, c);
        for v in &mut self.cells[r * w..(r + 1) * w] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.row(r).to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.at(i, c);
            if f != 0.0 {
                let dst = &mut self.cells[i * w..(i + 1) * w];
                for (d, s) in dst.iter_mut().zip(&pivot_row) {
                    *d -= f * s;
                }
                dst[c] = 0.0;
            }
        }
        let f = objective[c];
        if f != 0.0 {
            for (d, s) in objective.iter_mut().zip(&pivot_row) {
                *d -= f * s;
            }
            objective[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Reduced-cost row for `costs` (length `width - 1`) in the current basis.
    /// The last entry holds minus the objective value.
    fn reduced_costs(&self, costs: &[f64]) -> Vec<f64> {
        let mut d: Vec<f64> = costs.to_vec();
        d.push(0.0);
        for r in 0..self.rows {
            let cb = costs[self.basis[r]];
            if cb != 0.0 {
                for (dj, a) in d.iter_mut().zip(self.row(r)) {
                    *dj -= cb * a;
                }
            }
        }
        d
    }

    /// Primal simplex on a feasible basis, maximising. Bland's rule: entering
    /// column is the lowest eligible index, ties in the ratio test go to the
    /// lowest basic variable index.
    fn optimize(&mut self, objective: &mut [f64], allowed: &[bool]) -> Result<Phase> {
        let ncols = self.width - 1;
        loop {
            if self.pivots > self.max_pivots {
                return Err(Error::Numerical(format!(
                    "simplex exceeded {} pivots",
                    self.max_pivots
                )));
            }
            let entering = (0..ncols).find(|&j| allowed[j] && objective[j] > REDUCED_COST_TOL);
            let Some(c) = entering else {
                return Ok(Phase::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, c);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(r).max(0.0) / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((br, bratio)) => {
                        let tie = (ratio - bratio).abs() <= 1e-12 * (1.0 + bratio.abs());
                        if (!tie && ratio < bratio) || (tie && self.basis[r] < self.basis[br]) {
                            Some((r, ratio))
                        } else {
                            Some((br, bratio))
                        }
                    }
                };
            }
            match leave {
                Some((r, _)) => self.pivot(r, c, objective),
                None => return Ok(Phase::Unbounded),
            }
        }
    }

    fn remove_row(&mut self, r: usize) {
        let w = self.width;
        self.cells.drain(r * w..(r + 1) * w);
        self.basis.remove(r);
        self.rows -= 1;
    }
}

/// Solve a linear program by the two-phase dense simplex method.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    let n = problem.num_vars();
    if n == 0 {
        return Err(Error::Empty("linear program without variables"));
    }
    ensure_finite("LP objective", &problem.objective)?;
    for (row, rhs) in problem.eq_constraints.iter().chain(&problem.le_constraints) {
        ensure_dim("LP constraint row", n, row.len())?;
        ensure_finite("LP constraint row", row)?;
        ensure_finite("LP right-hand side", std::slice::from_ref(rhs))?;
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Kind {
        Eq,
        Le,
        Ge,
    }
    let mut rows: Vec<(Vec<f64>, f64, Kind)> = Vec::new();
    for (row, rhs) in &problem.eq_constraints {
        if *rhs < 0.0 {
            rows.push((row.iter().map(|v| -v).collect(), -rhs, Kind::Eq));
        } else {
            rows.push((row.clone(), *rhs, Kind::Eq));
        }
    }
    for (row, rhs) in &problem.le_constraints {
        if *rhs < 0.0 {
            rows.push((row.iter().map(|v| -v).collect(), -rhs, Kind::Ge));
        } else {
            rows.push((row.clone(), *rhs, Kind::Le));
        }
    }
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.2 != Kind::Eq).count();
    let n_art = rows.iter().filter(|r| r.2 != Kind::Le).count();
    let ncols = n + n_slack + n_art;
    let width = ncols + 1;
    let art_start = n + n_slack;

    let mut cells = vec![0.0; m * width];
    let mut basis = vec![0; m];
    let (mut slack, mut art) = (n, art_start);
    for (r, (coeffs, rhs, kind)) in rows.iter().enumerate() {
        let base = r * width;
        cells[base..base + n].copy_from_slice(coeffs);
        cells[base + width - 1] = *rhs;
        match kind {
            Kind::Le => {
                cells[base + slack] = 1.0;
                basis[r] = slack;
                slack += 1;
            }
            Kind::Ge => {
                cells[base + slack] = -1.0;
                slack += 1;
                cells[base + art] = 1.0;
                basis[r] = art;
                art += 1;
            }
            Kind::Eq => {
                cells[base + art] = 1.0;
                basis[r] = art;
                art += 1;
            }
        }
    }
    let mut t = Tableau {
        rows: m,
        width,
        cells,
        basis,
        pivots: 0,
        max_pivots: 50 * (m + ncols) + 10_000,
    };

    let rhs_scale = 1.0 + rows.iter().map(|r| r.1.abs()).sum::<f64>();

    // Phase 1: maximise -Σ artificials.
    if n_art > 0 {
        let mut costs = vec![0.0; ncols];
        costs[art_start..].iter_mut().for_each(|c| *c = -1.0);
        let mut obj = t.reduced_costs(&costs);
        let allowed = vec![true; ncols];
        t.optimize(&mut obj, &allowed)?;
        let infeasibility = obj[width - 1];
        if infeasibility > FEASIBILITY_TOL * rhs_scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                value: f64::NEG_INFINITY,
                point: vec![0.0; n],
                pivots: t.pivots,
            });
        }
        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < t.rows {
            if t.basis[r] >= art_start {
                let col = (0..art_start)
                    .filter(|&j| t.at(r, j).abs() > 1e-9)
                    .max_by(|&a, &b| t.at(r, a).abs().total_cmp(&t.at(r, b).abs()));
                match col {
                    Some(c) => {
                        let mut scratch = vec![0.0; width];
                        t.pivot(r, c, &mut scratch);
                        r += 1;
                    }
                    None => t.remove_row(r),
                }
            } else {
                r += 1;
            }
        }
    }

    // Phase 2.
    let mut costs = vec![0.0; ncols];
    costs[..n].copy_from_slice(&problem.objective);
    let mut obj = t.reduced_costs(&costs);
    let mut allowed = vec![true; ncols];
    allowed[art_start..].iter_mut().for_each(|a| *a = false);
    match t.optimize(&mut obj, &allowed)? {
        Phase::Unbounded => Ok(LpSolution {
            status: LpStatus::Unbounded,
            value: f64::INFINITY,
            point: vec![0.0; n],
            pivots: t.pivots,
        }),
        Phase::Optimal => {
            let mut point = vec![0.0; n];
            for r in 0..t.rows {
                if t.basis[r] < n {
                    point[t.basis[r]] = t.rhs(r).max(0.0);
                }
            }
            let value = dot(&problem.objective, &point);
            Ok(LpSolution {
                status: LpStatus::Optimal,
                value,
                point,
                pivots: t.pivots,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_variable_bound() {
        let p = LpProblem::maximize(vec![1.0]).le(vec![1.0], 1.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_optimum_set() {
        let p = LpProblem::maximize(vec![1.0, 1.0]).le(vec![1.0, 1.0], 1.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.value - 1.0).abs() < 1e-12);
        assert!(p.max_violation(&s.point) <= FEASIBILITY_TOL);
    }

    #[test]
    fn detects_infeasible() {
        let p = LpProblem::maximize(vec![1.0])
            .le(vec![1.0], 1.0)
            .eq(vec![1.0], 2.0);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);
        let p = LpProblem::maximize(vec![1.0]).le(vec![1.0], -1.0);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let p = LpProblem::maximize(vec![1.0, 0.0]).le(vec![-1.0, 1.0], 1.0);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn negative_rhs_ge_rows() {
        // max -x - y s.t. x + y >= 2 (written -x - y <= -2), x <= 3
        let p = LpProblem::maximize(vec![-1.0, -1.0])
            .le(vec![-1.0, -1.0], -2.0)
            .le(vec![1.0, 0.0], 3.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.value + 2.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities_are_dropped() {
        // 2x2 transport polytope: the four marginal rows have rank 3.
        let costs = [0.0, 1.0, 1.0, 0.0];
        let p = LpProblem::maximize(costs.iter().map(|c| -c).collect())
            .eq(vec![1.0, 1.0, 0.0, 0.0], 0.5)
            .eq(vec![0.0, 0.0, 1.0, 1.0], 0.5)
            .eq(vec![1.0, 0.0, 1.0, 0.0], 0.5)
            .eq(vec![0.0, 1.0, 0.0, 1.0], 0.5);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(s.value.abs() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let p = LpProblem::maximize(vec![1.0, 1.0]).le(vec![1.0], 1.0);
        assert!(matches!(solve_lp(&p), Err(Error::Dimension { .. })));
    }

    #[test]
    fn beale_cycling_example_terminates() {
        // Beale's classic cycling LP (maximisation form); optimum 1/20.
        let p = LpProblem::maximize(vec![0.75, -150.0, 0.02, -6.0])
            .le(vec![0.25, -60.0, -0.04, 9.0], 0.0)
            .le(vec![0.5, -90.0, -0.02, 3.0], 0.0)
            .le(vec![0.0, 0.0, 1.0, 0.0], 1.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.value - 0.05).abs() < 1e-9);
    }
}
