//! Brute-force reference computations for tests. Everything here works on
//! plain `Vec<f64>` data and shares no code with the library under test.

// index loops mirror the textbook formulas
#![allow(clippy::needless_range_loop)]

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = m.iter().flatten().map(|v| v * v).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

/// `WᵀW` for a row-major `rows × cols` matrix.
pub fn gram(rows: usize, cols: usize, w: &[f64]) -> Vec<Vec<f64>> {
    let mut g = vec![vec![0.0; cols]; cols];
    for i in 0..cols {
        for j in 0..cols {
            g[i][j] = (0..rows).map(|r| w[r * cols + i] * w[r * cols + j]).sum();
        }
    }
    g
}

/// Largest singular value via Jacobi on `WᵀW`.
pub fn spectral_norm(rows: usize, cols: usize, w: &[f64]) -> f64 {
    jacobi_eigenvalues(&gram(rows, cols, w))[0].max(0.0).sqrt()
}

/// Unique solution of `A x = b` when `A` has full column rank and the system
/// is consistent; `None` otherwise.
pub fn solve_unique(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = a.first()?.len();
    let mut rows: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, v)| {
            let mut r = r.clone();
            r.push(*v);
            r
        })
        .collect();
    let scale = rows.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * scale;
    let mut rank = 0;
    for col in 0..n {
        let pivot = (rank..rows.len())
            .max_by(|&i, &j| rows[i][col].abs().total_cmp(&rows[j][col].abs()))?;
        if rows[pivot][col].abs() <= tol {
            return None;
        }
        rows.swap(rank, pivot);
        let p = rows[rank][col];
        for v in rows[rank].iter_mut() {
            *v /= p;
        }
        for i in 0..rows.len() {
            if i != rank {
                let f = rows[i][col];
                if f != 0.0 {
                    for k in 0..=n {
                        rows[i][k] -= f * rows[rank][k];
                    }
                }
            }
        }
        rank += 1;
    }
    if rows[rank..].iter().any(|r| r[n].abs() > 1e-8 * scale) {
        return None;
    }
    Some(rows[..n].iter().map(|r| r[n]).collect())
}

/// Maximum of `c·x` over `{A_eq x = b_eq, A_le x <= b_le, x >= 0}` by checking
/// every basic solution. Exponential in the number of variables; meant for
/// at most about 16 of them. `None` when the polytope has no vertex.
pub fn vertex_enumeration_max(
    c: &[f64],
    eq: &[(Vec<f64>, f64)],
    le: &[(Vec<f64>, f64)],
) -> Option<f64> {
    let n = c.len();
    assert!(
        n <= 20,
        "vertex enumeration is exponential in the variable count"
    );
    let mut candidates: Vec<(Vec<f64>, f64)> = le.to_vec();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        // x_j >= 0 as the active constraint x_j = 0
        candidates.push((e, 0.0));
    }
    let m = candidates.len();
    assert!(m <= 24, "too many inequality constraints for enumeration");
    let mut best: Option<f64> = None;
    for mask in 0u32..(1u32 << m) {
        let mut a: Vec<Vec<f64>> = eq.iter().map(|(r, _)| r.clone()).collect();
        let mut b: Vec<f64> = eq.iter().map(|(_, v)| *v).collect();
        for (k, (r, v)) in candidates.iter().enumerate() {
            if mask >> k & 1 == 1 {
                a.push(r.clone());
                b.push(*v);
            }
        }
        if a.len() < n {
            continue;
        }
        let Some(x) = solve_unique(&a, &b) else {
            continue;
        };
        let feasible = x.iter().all(|v| *v >= -1e-9)
            && le.iter().all(|(r, v)| dot(r, &x) <= v + 1e-9)
            && eq.iter().all(|(r, v)| (dot(r, &x) - v).abs() <= 1e-9);
        if feasible {
            let val = dot(c, &x);
            best = Some(best.map_or(val, |bv: f64| bv.max(val)));
        }
    }
    best
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimum of `f` over `points` equally spaced values in `[lo, hi]`.
pub fn grid_minimum(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> (f64, f64) {
    assert!(points >= 2);
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .map(|t| (t, f(t)))
        .fold(
            (lo, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

/// A dense layer for [`straight_line_loss`]: row-major weights, optional bias
/// and an activation name (`"relu"`, `"tanh"` or `"identity"`).
pub struct RefLayer<'a> {
    pub rows: usize,
    pub cols: usize,
    pub weights: &'a [f64],
    pub bias: Option<&'a [f64]>,
    pub activation: &'a str,
}

fn activate(name: &str, z: f64) -> f64 {
    match name {
        "relu" => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        "tanh" => {
            let e = (2.0 * z).exp();
            if e.is_infinite() {
                1.0
            } else {
                (e - 1.0) / (e + 1.0)
            }
        }
        "identity" => z,
        other => panic!("unknown activation {other}"),
    }
}

/// Logits of a network evaluated by explicit loops; the last layer's
/// activation is ignored.
pub fn straight_line_logits(layers: &[RefLayer<'_>], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for (idx, l) in layers.iter().enumerate() {
        assert_eq!(a.len(), l.cols);
        let mut next = Vec::with_capacity(l.rows);
        for r in 0..l.rows {
            let mut z = 0.0;
            for c in 0..l.cols {
                z += l.weights[r * l.cols + c] * a[c];
            }
            if let Some(b) = l.bias {
                z += b[r];
            }
            next.push(if idx + 1 == layers.len() {
                z
            } else {
                activate(l.activation, z)
            });
        }
        a = next;
    }
    a
}

/// Cross-entropy `log Σ_j exp(z_j − z_y)` of the straight-line logits.
pub fn straight_line_loss(layers: &[RefLayer<'_>], x: &[f64], y: usize) -> f64 {
    let z = straight_line_logits(layers, x);
    let zy = z[y];
    let top = z.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    (top - zy) + z.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}
