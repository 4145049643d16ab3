#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasslip_core::measures::empirical_from_samples;
use wasslip_core::models::Activation;
use wasslip_core::{DiscreteMeasure, LabeledPoint, Matrix, Mlp, PointSet};
use wasslip_testkit::RefLayer;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize, dim: usize, k: usize, scale: f64) -> PointSet {
    let pts = (0..n)
        .map(|_| {
            let x = (0..dim).map(|_| rng.random_range(-scale..=scale)).collect();
            LabeledPoint::new(x, rng.random_range(0..k)).unwrap()
        })
        .collect();
    PointSet::new(pts, k).unwrap()
}

pub fn random_weights<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let drift: f64 = 1.0 - w.iter().sum::<f64>();
    w[0] += drift;
    w
}

pub fn random_measure<R: Rng>(rng: &mut R, n: usize, dim: usize, k: usize) -> DiscreteMeasure {
    let pts = random_points(rng, n, dim, k, 1.0);
    let w = random_weights(rng, n);
    DiscreteMeasure::new(pts, w).unwrap()
}

pub fn uniform(points: PointSet) -> DiscreteMeasure {
    empirical_from_samples(points).unwrap()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::random(rows, cols, 1.0, rng)
}

pub fn random_activation<R: Rng>(rng: &mut R) -> Activation {
    [Activation::Relu, Activation::Tanh, Activation::Identity][rng.random_range(0..3)]
}

/// Borrowed view of a network for the straight-line evaluator.
pub fn ref_layers(model: &Mlp) -> Vec<RefLayer<'_>> {
    let mut out: Vec<RefLayer<'_>> = model
        .hidden()
        .iter()
        .map(|l| RefLayer {
            rows: l.weights.rows(),
            cols: l.weights.cols(),
            weights: l.weights.as_slice(),
            bias: l.bias.as_deref(),
            activation: l.activation.as_str(),
        })
        .collect();
    let head = model.head();
    out.push(RefLayer {
        rows: head.weights().rows(),
        cols: head.weights().cols(),
        weights: head.weights().as_slice(),
        bias: head.bias(),
        activation: "identity",
    });
    out
}

/// Lattice of `m` points per axis on `[lo, hi]²`.
pub fn square_grid(m: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let step = (hi - lo) / (m - 1) as f64;
    let mut out = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            out.push(vec![lo + step * i as f64, lo + step * j as f64]);
        }
    }
    out
}
