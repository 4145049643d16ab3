use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LinearSoftmax, Mlp};
use crate::error::{Error, Result};
use crate::numerics::{induced_norm, sub, NormTag};

/// Which Lipschitz constant of the softmax cross-entropy enters a bound.
///
/// `Nominal` takes the operator norm of `W` verbatim. `Certified` multiplies it
/// by the largest dual norm of `p − e_y` over the simplex, which is what the
/// gradient `Wᵀ(p − e_y)` actually supports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMode {
    Nominal,
    #[default]
    Certified,
}

/// Lipschitz constant of `z ↦ lse(z) − z_y` in the logits, measured with
/// `tag` on the logit space.
pub fn logit_loss_lipschitz(tag: NormTag, mode: BoundMode) -> f64 {
    match mode {
        BoundMode::Nominal => 1.0,
        // sup over p in the simplex of ‖p − e_y‖_*
        BoundMode::Certified => match tag {
            NormTag::L2 => std::f64::consts::SQRT_2,
            NormTag::Linf => 2.0,
            NormTag::L1 => 1.0,
        },
    }
}

/// Bound on `lips_X(ℓ_{f_W})` for the softmax cross-entropy.
pub fn ce_lipschitz_bound(model: &LinearSoftmax, tag: NormTag, mode: BoundMode) -> Result<f64> {
    let op = induced_norm(model.weights(), tag)?;
    Ok(logit_loss_lipschitz(tag, mode) * op)
}

/// Exact Lipschitz constant of the slice `x ↦ ℓ(x, y)`: the gradient
/// `Σ_j p_j (w_j − w_y)` ranges over the convex hull of the row differences,
/// so the constant is `max_j ‖w_j − w_y‖_*`.
pub fn slice_lipschitz(model: &LinearSoftmax, y: usize, tag: NormTag) -> Result<f64> {
    let w = model.weights();
    if y >= w.rows() {
        return Err(Error::invalid(format!("label {y} out of range")));
    }
    let dual = tag.dual();
    Ok((0..w.rows())
        .map(|j| dual.eval(&sub(w.row(j), w.row(y))))
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBounds {
    /// `Π_i lip(α_i)·⦀W_i⦀`
    pub product: f64,
    /// `(1/l)·Σ_i ⦀W_i⦀^l`
    pub young: f64,
    pub layer_norms: Vec<f64>,
}

/// Layerwise product bound on the Lipschitz constant of the logit map and its
/// Young relaxation.
pub fn network_lipschitz_bound(model: &Mlp, tag: NormTag) -> Result<LipschitzBounds> {
    let layer_norms = model
        .weights()
        .into_iter()
        .map(|w| induced_norm(w, tag))
        .collect::<Result<Vec<_>>>()?;
    let activation_lip: f64 = model
        .hidden()
        .iter()
        .map(|l| l.activation.lip_bound())
        .product();
    let l = layer_norms.len() as i32;
    let product = activation_lip * layer_norms.iter().product::<f64>();
    let young = layer_norms.iter().map(|n| n.powi(l)).sum::<f64>() / l as f64;
    Ok(LipschitzBounds {
        product,
        young,
        layer_norms,
    })
}

/// Product bound on `lip(φ)` for the hidden layers only; 1 when there are none.
pub fn feature_lipschitz_bound(model: &Mlp, tag: NormTag) -> Result<f64> {
    model.hidden().iter().try_fold(1.0, |acc, layer| {
        Ok(acc * layer.activation.lip_bound() * induced_norm(&layer.weights, tag)?)
    })
}

/// Sampled lower bound on `lip(f)` with `tag` on both sides.
///
/// Evaluates difference quotients on `pairs` independent pairs from `sample`
/// and on coordinate perturbations `x, x + εe_i` around each first sample.
pub fn empirical_lipschitz<F, S, R>(
    f: F,
    mut sample: S,
    rng: &mut R,
    pairs: usize,
    tag: NormTag,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    S: FnMut(&mut R) -> Vec<f64>,
    R: Rng + ?Sized,
{
    if pairs == 0 {
        return Err(Error::invalid(
            "empirical Lipschitz estimate needs at least one pair",
        ));
    }
    const EPS: f64 = 1e-4;
    let mut best: Option<f64> = None;
    let mut consider = |a: &[f64], fa: &[f64], b: &[f64], fb: &[f64]| {
        let dx = tag.eval(&sub(a, b));
        if dx > 0.0 {
            let q = tag.eval(&sub(fa, fb)) / dx;
            best = Some(best.map_or(q, |m: f64| m.max(q)));
        }
    };
    for _ in 0..pairs {
        let a = sample(rng);
        let b = sample(rng);
        let fa = f(&a)?;
        let fb = f(&b)?;
        consider(&a, &fa, &b, &fb);
        let mut probe = a.clone();
        for i in 0..a.len() {
            probe[i] = a[i] + EPS;
            let fp = f(&probe)?;
            consider(&a, &fa, &probe, &fp);
            probe[i] = a[i];
        }
    }
    best.ok_or_else(|| Error::Sampling("every sampled pair was degenerate".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, Layer};
    use crate::numerics::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ce_bound_examples() {
        let zero = LinearSoftmax::new(Matrix::zeros(3, 2), None).unwrap();
        for mode in [BoundMode::Nominal, BoundMode::Certified] {
            assert_eq!(ce_lipschitz_bound(&zero, NormTag::L2, mode).unwrap(), 0.0);
        }
        let id = LinearSoftmax::new(Matrix::identity(3), None).unwrap();
        let nominal = ce_lipschitz_bound(&id, NormTag::L2, BoundMode::Nominal).unwrap();
        let cert = ce_lipschitz_bound(&id, NormTag::L2, BoundMode::Certified).unwrap();
        assert!((nominal - 1.0).abs() < 1e-10);
        assert!((cert - 2f64.sqrt()).abs() < 1e-10);
        assert!((slice_lipschitz(&id, 0, NormTag::L2).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bias_does_not_change_bound() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.5]]).unwrap();
        let plain = LinearSoftmax::new(w.clone(), None).unwrap();
        let biased = LinearSoftmax::new(w, Some(vec![3.0, -7.0])).unwrap();
        for tag in [NormTag::L1, NormTag::L2, NormTag::Linf] {
            assert_eq!(
                ce_lipschitz_bound(&plain, tag, BoundMode::Certified).unwrap(),
                ce_lipschitz_bound(&biased, tag, BoundMode::Certified).unwrap()
            );
        }
    }

    #[test]
    fn product_and_young_arithmetic() {
        let l1 = Layer::new(Matrix::diag(&[2.0, 1.0]).unwrap(), None, Activation::Relu).unwrap();
        let head = LinearSoftmax::new(Matrix::diag(&[0.5, 0.25]).unwrap(), None).unwrap();
        let net = Mlp::new(vec![l1], head).unwrap();
        let b = network_lipschitz_bound(&net, NormTag::L2).unwrap();
        assert!((b.product - 1.0).abs() < 1e-9);
        assert!((b.young - 2.125).abs() < 1e-9);
    }

    #[test]
    fn identity_stack() {
        let layers: Vec<Layer> = (0..3)
            .map(|_| Layer::new(Matrix::identity(2), None, Activation::Tanh).unwrap())
            .collect();
        let net = Mlp::new(
            layers,
            LinearSoftmax::new(Matrix::identity(2), None).unwrap(),
        )
        .unwrap();
        let b = network_lipschitz_bound(&net, NormTag::Linf).unwrap();
        assert_eq!((b.product, b.young), (1.0, 1.0));
    }

    #[test]
    fn empirical_on_linear_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sampler = |r: &mut ChaCha8Rng| vec![r.random_range(-5.0..5.0)];
        let e = empirical_lipschitz(|x| Ok(vec![3.0 * x[0]]), sampler, &mut rng, 50, NormTag::L2)
            .unwrap();
        assert!((3.0 - 1e-6..=3.0 + 1e-9).contains(&e), "{e}");
        let c = empirical_lipschitz(|_| Ok(vec![1.0]), sampler, &mut rng, 50, NormTag::L2).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn all_degenerate_pairs_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // zero-dimensional inputs: every pair coincides
        let r = empirical_lipschitz(|_| Ok(vec![0.0]), |_| Vec::new(), &mut rng, 5, NormTag::L2);
        assert!(matches!(r, Err(Error::Sampling(_))));
    }
}
