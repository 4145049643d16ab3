//! Finitely supported probability measures on an input–label space, the
//! κ-product metric and exact optimal transport costs.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::numerics::{
    fmt_f64, parse_csv_floats, solve_lp, LpProblem, LpStatus, Matrix, NormTag, Vector,
};

/// Weights must sum to one within this tolerance.
pub const WEIGHT_TOL: f64 = 1e-12;
/// Slack used when testing `cost <= rho`.
pub const BALL_TOL: f64 = 1e-9;

/// An input–label pair `(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: Vector,
    pub y: usize,
}

impl LabeledPoint {
    pub fn new(x: Vec<f64>, y: usize) -> Result<Self> {
        Ok(Self {
            x: Vector::new(x)?,
            y,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// An indexed, nonempty multiset of labelled points sharing one input dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    points: Vec<LabeledPoint>,
    label_count: usize,
}

impl PointSet {
    pub fn new(points: Vec<LabeledPoint>, label_count: usize) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("point set"))?;
        let dim = first.dim();
        if dim == 0 {
            return Err(Error::Empty("points must have at least one coordinate"));
        }
        for p in &points {
            ensure_dim("point dimension", dim, p.dim())?;
            if p.y >= label_count {
                return Err(Error::invalid(format!(
                    "label {} out of range for {label_count} labels",
                    p.y
                )));
            }
        }
        Ok(Self {
            points,
            label_count,
        })
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn get(&self, i: usize) -> &LabeledPoint {
        &self.points[i]
    }

    /// Concatenation, keeping the larger label universe.
    pub fn union(&self, other: &PointSet) -> Result<PointSet> {
        let mut points = self.points.clone();
        points.extend(other.points.iter().cloned());
        PointSet::new(points, self.label_count.max(other.label_count))
    }

    /// Every input location paired with every label.
    pub fn with_all_labels(xs: &[Vec<f64>], label_count: usize) -> Result<PointSet> {
        let mut points = Vec::with_capacity(xs.len() * label_count);
        for x in xs {
            for y in 0..label_count {
                points.push(LabeledPoint::new(x.clone(), y)?);
            }
        }
        PointSet::new(points, label_count)
    }
}

/// A probability measure with finite support, one weight per indexed point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    support: PointSet,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: PointSet, weights: Vec<f64>) -> Result<Self> {
        ensure_dim("measure weights", support.len(), weights.len())?;
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!(
                "weight {i} is negative or non-finite: {}",
                weights[i]
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { support, weights })
    }

    pub fn dirac(point: LabeledPoint, label_count: usize) -> Result<Self> {
        Self::new(PointSet::new(vec![point], label_count)?, vec![1.0])
    }

    pub fn support(&self) -> &PointSet {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Pairs `(weight, point)` in support order.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, &LabeledPoint)> {
        self.weights.iter().copied().zip(self.support.points())
    }

    /// `t·self + (1 − t)·other` over the concatenated support.
    pub fn mixture(&self, other: &DiscreteMeasure, t: f64) -> Result<DiscreteMeasure> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid("mixture coefficient outside [0, 1]"));
        }
        let support = self.support.union(&other.support)?;
        let mut weights: Vec<f64> = self.weights.iter().map(|w| t * w).collect();
        weights.extend(other.weights.iter().map(|w| (1.0 - t) * w));
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        DiscreteMeasure::new(support, weights)
    }

    /// CSV: one row per atom, `weight,label,x0,x1,…`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (w, p) in self.atoms() {
            out.push_str(&fmt_f64(w));
            out.push(',');
            out.push_str(&p.y.to_string());
            for v in p.x.iter() {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, label_count: usize) -> Result<Self> {
        let mut weights = Vec::new();
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (w, rest) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(i + 1, "expected weight,label,x…"))?;
            let (y, xs) = rest
                .split_once(',')
                .ok_or_else(|| Error::parse(i + 1, "expected weight,label,x…"))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|e| Error::parse(i + 1, format!("bad weight: {e}")))?;
            let y: usize = y
                .trim()
                .parse()
                .map_err(|e| Error::parse(i + 1, format!("bad label: {e}")))?;
            weights.push(w);
            points.push(LabeledPoint::new(parse_csv_floats(xs, i + 1)?, y)?);
        }
        DiscreteMeasure::new(PointSet::new(points, label_count)?, weights)
    }
}

/// The κ-product metric `‖x − x'‖ + κ·d_Y(y, y')` on input–label pairs.
///
/// `kappa = f64::INFINITY` forbids any change of label: distinct labels are at
/// infinite distance.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSpec {
    x_norm: NormTag,
    kappa: f64,
    label_metric: Matrix,
}

impl MetricSpec {
    pub fn new(x_norm: NormTag, kappa: f64, label_metric: Matrix) -> Result<Self> {
        if kappa.is_nan() || kappa <= 0.0 {
            return Err(Error::invalid(format!(
                "kappa must be positive, got {kappa}"
            )));
        }
        let k = label_metric.rows();
        ensure_dim("label metric columns", k, label_metric.cols())?;
        for a in 0..k {
            if label_metric[(a, a)] != 0.0 {
                return Err(Error::invalid(format!(
                    "label metric has nonzero diagonal at {a}"
                )));
            }
            for b in 0..k {
                let d = label_metric[(a, b)];
                if d < 0.0 {
                    return Err(Error::invalid(format!(
                        "label metric negative at ({a}, {b})"
                    )));
                }
                if d != label_metric[(b, a)] {
                    return Err(Error::invalid(format!(
                        "label metric asymmetric at ({a}, {b})"
                    )));
                }
                if a != b && d == 0.0 {
                    return Err(Error::invalid(format!(
                        "distinct labels {a}, {b} at distance 0"
                    )));
                }
            }
        }
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    let lhs = label_metric[(a, c)];
                    let rhs = label_metric[(a, b)] + label_metric[(b, c)];
                    if lhs > rhs + 1e-12 * (1.0 + rhs) {
                        return Err(Error::invalid(format!(
                            "label metric violates the triangle inequality on ({a}, {b}, {c})"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            x_norm,
            kappa,
            label_metric,
        })
    }

    /// Discrete label metric `1[y ≠ y']`.
    pub fn discrete(x_norm: NormTag, kappa: f64, label_count: usize) -> Result<Self> {
        let mut m = Matrix::zeros(label_count.max(1), label_count.max(1));
        for a in 0..label_count {
            for b in 0..label_count {
                if a != b {
                    m[(a, b)] = 1.0;
                }
            }
        }
        Self::new(x_norm, kappa, m)
    }

    pub fn x_norm(&self) -> NormTag {
        self.x_norm
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn label_metric(&self) -> &Matrix {
        &self.label_metric
    }

    pub fn label_count(&self) -> usize {
        self.label_metric.rows()
    }

    pub fn label_distance(&self, a: usize, b: usize) -> f64 {
        self.label_metric[(a, b)]
    }

    /// `κ·d_Y(a, b)`, infinite for distinct labels when κ is infinite.
    pub fn label_cost(&self, a: usize, b: usize) -> f64 {
        let d = self.label_distance(a, b);
        if d == 0.0 {
            0.0
        } else {
            self.kappa * d
        }
    }

    /// Same label distances and input norm, different κ.
    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        Self::new(self.x_norm, kappa, self.label_metric.clone())
    }
}

pub fn metric_eval(spec: &MetricSpec, s: &LabeledPoint, t: &LabeledPoint) -> Result<f64> {
    ensure_dim("metric input dimension", s.dim(), t.dim())?;
    let k = spec.label_count();
    if s.y >= k || t.y >= k {
        return Err(Error::invalid(format!(
            "labels ({}, {}) outside the metric's {k} labels",
            s.y, t.y
        )));
    }
    let dx = spec.x_norm.eval(&crate::numerics::sub(&s.x, &t.x));
    Ok(dx + spec.label_cost(s.y, t.y))
}

/// Ground costs `c_ij = d(s_i, t_j)` between two point sets; entries may be `+inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        ensure_dim("cost matrix entries", rows * cols, entries.len())?;
        if let Some(i) = entries.iter().position(|c| c.is_nan() || *c < 0.0) {
            return Err(Error::invalid(format!("cost entry {i} is negative or NaN")));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_metric(spec: &MetricSpec, source: &PointSet, target: &PointSet) -> Result<Self> {
        let mut entries = Vec::with_capacity(source.len() * target.len());
        for s in source.points() {
            for t in target.points() {
                entries.push(metric_eval(spec, s, t)?);
            }
        }
        Self::new(source.len(), target.len(), entries)
    }

    /// Costs from an arbitrary function of the two points.
    pub fn from_fn<F>(source: &PointSet, target: &PointSet, mut cost: F) -> Result<Self>
    where
        F: FnMut(&LabeledPoint, &LabeledPoint) -> f64,
    {
        let mut entries = Vec::with_capacity(source.len() * target.len());
        for s in source.points() {
            for t in target.points() {
                entries.push(cost(s, t));
            }
        }
        Self::new(source.len(), target.len(), entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }
}

/// Uniform weights `1/n` on each indexed point; duplicates are not merged.
pub fn empirical_from_samples(points: PointSet) -> Result<DiscreteMeasure> {
    if points.is_empty() {
        return Err(Error::Empty("empirical measure needs samples"));
    }
    let n = points.len();
    DiscreteMeasure::new(points, vec![1.0 / n as f64; n])
}

/// Image measure `f#μ`: atom `i` moves to `f(s_i)` and keeps its weight.
/// Coincident images are not merged.
pub fn pushforward<F>(mu: &DiscreteMeasure, mut map: F) -> Result<DiscreteMeasure>
where
    F: FnMut(&LabeledPoint) -> Result<LabeledPoint>,
{
    let image = mu
        .support
        .points()
        .iter()
        .map(&mut map)
        .collect::<Result<Vec<_>>>()?;
    let label_count = image
        .iter()
        .map(|p| p.y + 1)
        .max()
        .unwrap_or(0)
        .max(mu.support.label_count());
    DiscreteMeasure::new(PointSet::new(image, label_count)?, mu.weights.clone())
}

/// An optimal coupling together with its cost.
#[derive(Clone, Debug)]
pub struct Transport {
    pub cost: f64,
    /// Row-major `n × m` plan; entries for infinite costs are zero.
    pub plan: Vec<f64>,
}

/// Exact optimal coupling between two discrete measures by linear programming.
/// Infinite cost entries are excluded from the program.
pub fn optimal_transport(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    costs: &CostMatrix,
) -> Result<Transport> {
    let (n, m) = (mu.len(), nu.len());
    ensure_dim("cost matrix rows", n, costs.rows())?;
    ensure_dim("cost matrix columns", m, costs.cols())?;

    let vars: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|&(i, j)| costs.get(i, j).is_finite())
        .collect();
    if vars.is_empty() {
        return Err(Error::Infeasible(
            "every pair of atoms has infinite cost".into(),
        ));
    }
    let objective: Vec<f64> = vars.iter().map(|&(i, j)| -costs.get(i, j)).collect();
    let mut lp = LpProblem::maximize(objective);
    for i in 0..n {
        let row = vars
            .iter()
            .map(|&(a, _)| if a == i { 1.0 } else { 0.0 })
            .collect();
        lp = lp.eq(row, mu.weights[i]);
    }
    for j in 0..m {
        let row = vars
            .iter()
            .map(|&(_, b)| if b == j { 1.0 } else { 0.0 })
            .collect();
        lp = lp.eq(row, nu.weights[j]);
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {
            let mut plan = vec![0.0; n * m];
            for (&(i, j), v) in vars.iter().zip(&sol.point) {
                plan[i * m + j] = *v;
            }
            Ok(Transport {
                cost: -sol.value,
                plan,
            })
        }
        LpStatus::Infeasible => Err(Error::Infeasible(
            "no coupling with finite cost exists".into(),
        )),
        LpStatus::Unbounded => Err(Error::Numerical(
            "transport program reported unbounded".into(),
        )),
    }
}

/// `C_c(μ, ν) = inf_π Σ π_ij c_ij` over couplings of μ and ν.
pub fn transport_cost(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    costs: &CostMatrix,
) -> Result<f64> {
    Ok(optimal_transport(mu, nu, costs)?.cost)
}

/// Whether `ν` lies in the transport-cost ball of radius `rho` around `μ`.
pub fn ball_contains(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    costs: &CostMatrix,
    rho: f64,
) -> Result<bool> {
    if rho.is_nan() || rho < 0.0 {
        return Err(Error::invalid(format!(
            "radius must be nonnegative, got {rho}"
        )));
    }
    Ok(transport_cost(mu, nu, costs)? <= rho + BALL_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_points(xs: &[f64]) -> PointSet {
        PointSet::new(
            xs.iter()
                .map(|x| LabeledPoint::new(vec![*x], 0).unwrap())
                .collect(),
            1,
        )
        .unwrap()
    }

    fn abs_cost(a: &PointSet, b: &PointSet) -> CostMatrix {
        CostMatrix::from_fn(a, b, |s, t| (s.x[0] - t.x[0]).abs()).unwrap()
    }

    #[test]
    fn metric_examples() {
        let spec = MetricSpec::discrete(NormTag::L2, 2.0, 2).unwrap();
        let s = LabeledPoint::new(vec![0.0], 0).unwrap();
        assert_eq!(metric_eval(&spec, &s, &s).unwrap(), 0.0);
        let t = LabeledPoint::new(vec![3.0], 0).unwrap();
        assert_eq!(metric_eval(&spec, &s, &t).unwrap(), 3.0);
        let u = LabeledPoint::new(vec![0.0], 1).unwrap();
        assert_eq!(metric_eval(&spec, &s, &u).unwrap(), 2.0);

        let hard = MetricSpec::discrete(NormTag::L2, f64::INFINITY, 2).unwrap();
        assert_eq!(metric_eval(&hard, &s, &u).unwrap(), f64::INFINITY);
        assert_eq!(metric_eval(&hard, &s, &t).unwrap(), 3.0);

        let bad = LabeledPoint::new(vec![0.0, 1.0], 0).unwrap();
        assert!(matches!(
            metric_eval(&spec, &s, &bad),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn label_metric_validation() {
        let m = Matrix::from_rows(&[
            vec![0.0, 1.0, 5.0],
            vec![1.0, 0.0, 1.0],
            vec![5.0, 1.0, 0.0],
        ])
        .unwrap();
        assert!(MetricSpec::new(NormTag::L1, 1.0, m).is_err());
        let asym = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        assert!(MetricSpec::new(NormTag::L1, 1.0, asym).is_err());
        assert!(MetricSpec::discrete(NormTag::L1, 0.0, 2).is_err());
        assert!(MetricSpec::discrete(NormTag::L1, -1.0, 2).is_err());
    }

    #[test]
    fn empirical_weights() {
        let one = empirical_from_samples(line_points(&[4.0])).unwrap();
        assert_eq!(one.weights(), &[1.0]);
        let four = empirical_from_samples(line_points(&[0.0, 1.0, 2.0, 3.0])).unwrap();
        assert_eq!(four.weights(), &[0.25; 4]);
        let dup = empirical_from_samples(line_points(&[1.0, 1.0, 2.0])).unwrap();
        assert_eq!(dup.len(), 3);
        assert!(dup.weights().iter().all(|w| (*w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn pushforward_examples() {
        let mu = empirical_from_samples(line_points(&[0.0, 1.0])).unwrap();
        let same = pushforward(&mu, |p| Ok(p.clone())).unwrap();
        assert_eq!(same, mu);
        let constant = pushforward(&mu, |_| LabeledPoint::new(vec![7.0], 0)).unwrap();
        assert!(constant.support().points().iter().all(|p| p.x[0] == 7.0));
        let doubled = pushforward(&mu, |p| LabeledPoint::new(vec![2.0 * p.x[0]], p.y)).unwrap();
        let xs: Vec<f64> = doubled.support().points().iter().map(|p| p.x[0]).collect();
        assert_eq!(xs, vec![0.0, 2.0]);
        assert_eq!(doubled.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn transport_examples() {
        let a = line_points(&[0.0, 1.0]);
        let mu = empirical_from_samples(a.clone()).unwrap();
        assert!(transport_cost(&mu, &mu, &abs_cost(&a, &a)).unwrap().abs() < 1e-12);

        let d0 = DiscreteMeasure::dirac(LabeledPoint::new(vec![0.0], 0).unwrap(), 1).unwrap();
        let d1 = DiscreteMeasure::dirac(LabeledPoint::new(vec![1.0], 0).unwrap(), 1).unwrap();
        let c01 = abs_cost(d0.support(), d1.support());
        assert!((transport_cost(&d0, &d1, &c01).unwrap() - 1.0).abs() < 1e-12);
        assert!(!ball_contains(&d0, &d1, &c01, 0.5).unwrap());
        assert!(ball_contains(&d0, &d1, &c01, 1.0).unwrap());

        let b = line_points(&[0.0, 2.0]);
        let nu = empirical_from_samples(b.clone()).unwrap();
        let c = transport_cost(&mu, &nu, &abs_cost(&a, &b)).unwrap();
        assert!((c - 0.5).abs() < 1e-12);
        assert!(ball_contains(&mu, &mu, &abs_cost(&a, &a), 0.0).unwrap());
    }

    #[test]
    fn infinite_costs_are_excluded() {
        let spec = MetricSpec::discrete(NormTag::L1, f64::INFINITY, 2).unwrap();
        let src = PointSet::new(
            vec![
                LabeledPoint::new(vec![0.0], 0).unwrap(),
                LabeledPoint::new(vec![0.0], 1).unwrap(),
            ],
            2,
        )
        .unwrap();
        let dst = PointSet::new(
            vec![
                LabeledPoint::new(vec![1.0], 1).unwrap(),
                LabeledPoint::new(vec![3.0], 0).unwrap(),
            ],
            2,
        )
        .unwrap();
        let mu = empirical_from_samples(src.clone()).unwrap();
        let nu = empirical_from_samples(dst.clone()).unwrap();
        let costs = CostMatrix::from_metric(&spec, &src, &dst).unwrap();
        assert!((transport_cost(&mu, &nu, &costs).unwrap() - 2.0).abs() < 1e-12);

        let only_label0 =
            DiscreteMeasure::dirac(LabeledPoint::new(vec![0.0], 0).unwrap(), 2).unwrap();
        let only_label1 =
            DiscreteMeasure::dirac(LabeledPoint::new(vec![0.0], 1).unwrap(), 2).unwrap();
        let c =
            CostMatrix::from_metric(&spec, only_label0.support(), only_label1.support()).unwrap();
        assert!(matches!(
            transport_cost(&only_label0, &only_label1, &c),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn measure_csv_round_trip() {
        let pts = PointSet::new(
            vec![
                LabeledPoint::new(vec![0.1, -2.0], 1).unwrap(),
                LabeledPoint::new(vec![1.0 / 3.0, 5e-300], 0).unwrap(),
            ],
            2,
        )
        .unwrap();
        let mu = DiscreteMeasure::new(pts, vec![0.3, 0.7]).unwrap();
        let back = DiscreteMeasure::from_csv(&mu.to_csv(), 2).unwrap();
        assert_eq!(back, mu);
    }

    #[test]
    fn rejects_bad_weights() {
        let pts = line_points(&[0.0, 1.0]);
        assert!(DiscreteMeasure::new(pts.clone(), vec![0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::new(pts.clone(), vec![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::new(pts, vec![1.0]).is_err());
        assert!(PointSet::new(vec![], 1).is_err());
    }
}
