//! Synthetic datasets and the `label,x0,x1,…` CSV format.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{LabeledPoint, PointSet};
use crate::numerics::{fmt_f64, parse_csv_floats};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    GaussianBlobs,
    TwoMoons,
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub generator: Generator,
    /// Sample count; for `Grid` the number of points per axis is `n^(1/dim)`.
    pub n: usize,
    pub k: usize,
    pub dim: usize,
    /// Blob standard deviation or moon noise level.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.5
}

impl DataSpec {
    pub fn blobs(n: usize, k: usize, dim: usize) -> Self {
        Self {
            generator: Generator::GaussianBlobs,
            n,
            k,
            dim,
            noise: 0.5,
        }
    }

    pub fn two_moons(n: usize, noise: f64) -> Self {
        Self {
            generator: Generator::TwoMoons,
            n,
            k: 2,
            dim: 2,
            noise,
        }
    }

    pub fn grid(n: usize, k: usize, dim: usize) -> Self {
        Self {
            generator: Generator::Grid,
            n,
            k,
            dim,
            noise: 0.0,
        }
    }
}

/// Minimum distance between blob centres.
const CENTRE_SEPARATION: f64 = 3.0;
const CENTRE_BOX: f64 = 5.0;

pub fn gen_data(spec: &DataSpec, seed: u64) -> Result<PointSet> {
    if spec.k < 2 || spec.n < spec.k {
        return Err(Error::invalid(format!(
            "need n >= k >= 2, got n={} k={}",
            spec.n, spec.k
        )));
    }
    if spec.dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !(spec.noise >= 0.0) || !spec.noise.is_finite() {
        return Err(Error::invalid("noise must be finite and nonnegative"));
    }
    let points = match spec.generator {
        Generator::GaussianBlobs => blobs(spec, seed)?,
        Generator::TwoMoons => moons(spec, seed)?,
        Generator::Grid => grid(spec)?,
    };
    PointSet::new(points, spec.k)
}

fn blobs(spec: &DataSpec, seed: u64) -> Result<Vec<LabeledPoint>> {
    let mut rng = stream(seed, "blob-centres");
    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(spec.k);
    let mut attempts = 0;
    while centres.len() < spec.k {
        let c: Vec<f64> = (0..spec.dim)
            .map(|_| rng.random_range(-CENTRE_BOX..=CENTRE_BOX))
            .collect();
        let far = centres.iter().all(|o| {
            o.iter()
                .zip(&c)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                >= CENTRE_SEPARATION
        });
        attempts += 1;
        if far || attempts > 10_000 {
            centres.push(c);
        }
    }
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = stream(seed, "blob-samples");
    (0..spec.n)
        .map(|i| {
            let y = i % spec.k;
            let x = centres[y]
                .iter()
                .map(|c| c + normal.sample(&mut rng))
                .collect();
            LabeledPoint::new(x, y)
        })
        .collect()
}

fn moons(spec: &DataSpec, seed: u64) -> Result<Vec<LabeledPoint>> {
    if spec.k != 2 || spec.dim != 2 {
        return Err(Error::invalid(
            "two-moons is two-dimensional with two labels",
        ));
    }
    let upper = spec.n.div_ceil(2);
    let lower = spec.n - upper;
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = stream(seed, "moons");
    let angle = |i: usize, m: usize| {
        if m <= 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (m - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(spec.n);
    for i in 0..upper {
        let t = angle(i, upper);
        let x = vec![
            t.cos() + normal.sample(&mut rng),
            t.sin() + normal.sample(&mut rng),
        ];
        out.push(LabeledPoint::new(x, 0)?);
    }
    for i in 0..lower {
        let t = angle(i, lower);
        let x = vec![
            1.0 - t.cos() + normal.sample(&mut rng),
            0.5 - t.sin() + normal.sample(&mut rng),
        ];
        out.push(LabeledPoint::new(x, 1)?);
    }
    Ok(out)
}

fn grid(spec: &DataSpec) -> Result<Vec<LabeledPoint>> {
    let m = (spec.n as f64).powf(1.0 / spec.dim as f64).round() as usize;
    if m < 2 || m.checked_pow(spec.dim as u32) != Some(spec.n) {
        return Err(Error::invalid(format!(
            "grid needs n to be a perfect {}-th power of at least 2, got {}",
            spec.dim, spec.n
        )));
    }
    Ok(lattice(m, spec.dim, -1.0, 1.0)
        .into_iter()
        .enumerate()
        .map(|(i, x)| LabeledPoint {
            x: x.try_into().expect("lattice is finite"),
            y: i % spec.k,
        })
        .collect())
}

/// `m^dim` lattice on `[lo, hi]^dim`, first coordinate varying fastest.
pub fn lattice(m: usize, dim: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let coord = |i: usize| {
        if m == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (m - 1) as f64
        }
    };
    let total = m.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            (0..dim)
                .map(|_| {
                    let c = coord(idx % m);
                    idx /= m;
                    c
                })
                .collect()
        })
        .collect()
}

pub fn write_dataset_csv(points: &PointSet) -> String {
    let mut out = String::from("label");
    for j in 0..points.dim() {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for p in points.points() {
        out.push_str(&p.y.to_string());
        for v in p.x.iter() {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Parses a dataset; `label_count` defaults to one more than the largest label.
pub fn read_dataset_csv(text: &str, label_count: Option<usize>) -> Result<PointSet> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Empty("dataset"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(Error::parse(1, "header must be 'label,x0,x1,…'"));
    }
    for (j, c) in cols[1..].iter().enumerate() {
        if *c != format!("x{j}") {
            return Err(Error::parse(
                1,
                format!("expected column x{j}, found '{c}'"),
            ));
        }
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        let (label, rest) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(i + 1, "row has no coordinates"))?;
        let y: usize = label
            .trim()
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("bad label '{label}'")))?;
        let x = parse_csv_floats(rest, i + 1)?;
        if x.len() != cols.len() - 1 {
            return Err(Error::parse(
                i + 1,
                format!("expected {} coordinates", cols.len() - 1),
            ));
        }
        points.push(LabeledPoint::new(x, y)?);
    }
    if points.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let k = label_count.unwrap_or_else(|| points.iter().map(|p| p.y).max().unwrap_or(0) + 1);
    PointSet::new(points, k)
}
