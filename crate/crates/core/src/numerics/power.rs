//! Largest singular value and singular vectors by power iteration on `WᵀW`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::{dot, Matrix, Vector};
use super::norms::NormTag;
use crate::error::{ensure_dim, Error, Result};

pub const DEFAULT_MAX_ITERS: usize = 10_000;
pub const DEFAULT_TOL: f64 = 1e-10;

/// Seed of the perturbation added to the deterministic starting vector.
const START_SEED: u64 = 0x05ee_d0f5_ca1e;
const START_NOISE: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct PowerIteration {
    pub sigma: f64,
    /// Left singular vector, unit ℓ2.
    pub u: Vector,
    /// Right singular vector, unit ℓ2.
    pub v: Vector,
    pub iterations: usize,
    /// Sigma estimate after each iteration.
    pub history: Vec<f64>,
}

/// Starting vector `(1, 1/2, …, 1/n)` plus seeded noise of magnitude 1e-3,
/// normalised.
pub fn default_start(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut v: Vec<f64> = (0..n)
        .map(|j| 1.0 / (j as f64 + 1.0) + START_NOISE * rng.random_range(-1.0..1.0))
        .collect();
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = NormTag::L2.eval(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

pub fn power_iteration(w: &Matrix, max_iters: usize, tol: f64) -> Result<PowerIteration> {
    power_iteration_from(w, &default_start(w.cols()), max_iters, tol)
}

/// Power iteration from a caller-supplied start (warm start). A start that is
/// zero falls back to [`default_start`].
pub fn power_iteration_from(
    w: &Matrix,
    start: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<PowerIteration> {
    ensure_dim("power iteration start", w.cols(), start.len())?;
    if max_iters == 0 {
        return Err(Error::invalid("power iteration needs max_iters >= 1"));
    }
    if w.is_zero() {
        return Ok(PowerIteration {
            sigma: 0.0,
            u: Vector::basis(w.rows(), 0),
            v: Vector::basis(w.cols(), 0),
            iterations: 0,
            history: vec![0.0],
        });
    }

    let mut v = start.to_vec();
    if normalize(&mut v) == 0.0 {
        v = default_start(w.cols());
    }
    let mut wv = w.matvec(&v)?;
    let mut sigma = NormTag::L2.eval(&wv);
    let mut history = Vec::with_capacity(64);
    history.push(sigma);
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let mut next = w.matvec_t(&wv)?;
        if normalize(&mut next) == 0.0 {
            // start orthogonal to the row space; restart from the default
            next = default_start(w.cols());
        }
        v = next;
        wv = w.matvec(&v)?;
        let next_sigma = NormTag::L2.eval(&wv);
        history.push(next_sigma);
        let delta = (next_sigma - sigma).abs();
        sigma = next_sigma;
        if delta < tol {
            break;
        }
    }

    let mut u = wv;
    if normalize(&mut u) == 0.0 {
        u = Vector::basis(w.rows(), 0).into_inner();
    }
    // Canonical sign: largest-magnitude entry of v positive.
    let pivot = v
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, x)| {
            if x.abs() > bv {
                (i, x.abs())
            } else {
                (bi, bv)
            }
        })
        .0;
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
        u.iter_mut().for_each(|x| *x = -*x);
    }

    Ok(PowerIteration {
        sigma,
        u: Vector::new(u)?,
        v: Vector::new(v)?,
        iterations,
        history,
    })
}

/// Second largest singular value, by power iteration on `WᵀW` deflated by the
/// top right singular vector.
pub fn second_singular_value(
    w: &Matrix,
    top: &PowerIteration,
    max_iters: usize,
    tol: f64,
) -> Result<f64> {
    let n = w.cols();
    if n < 2 || w.rows() < 2 {
        return Ok(0.0);
    }
    let v1 = top.v.as_slice();
    let deflate = |x: &mut Vec<f64>| {
        let c = dot(x, v1);
        x.iter_mut().zip(v1).for_each(|(xi, vi)| *xi -= c * vi);
    };
    let mut x = default_start(n);
    x.reverse();
    deflate(&mut x);
    if normalize(&mut x) == 0.0 {
        return Ok(0.0);
    }
    let mut sigma = NormTag::L2.eval(&w.matvec(&x)?);
    for _ in 0..max_iters {
        let wx = w.matvec(&x)?;
        let mut next = w.matvec_t(&wx)?;
        deflate(&mut next);
        if normalize(&mut next) == 0.0 {
            return Ok(0.0);
        }
        x = next;
        let s = NormTag::L2.eval(&w.matvec(&x)?);
        let delta = (s - sigma).abs();
        sigma = s;
        if delta < tol {
            break;
        }
    }
    Ok(sigma)
}
