use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ce_from_logits, Classifier, LossEval};
use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::numerics::Matrix;

/// Max-shifted `log Σ exp(z)`.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

/// Multiclass logistic regression `x ↦ softmax(W x + b)`, `W` of shape `k × n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmax {
    weights: Matrix,
    bias: Option<Vec<f64>>,
}

impl LinearSoftmax {
    pub fn new(weights: Matrix, bias: Option<Vec<f64>>) -> Result<Self> {
        if weights.rows() < 2 {
            return Err(Error::invalid(
                "a softmax classifier needs at least two labels",
            ));
        }
        if let Some(b) = &bias {
            ensure_dim("softmax bias", weights.rows(), b.len())?;
            ensure_finite("softmax bias", b)?;
        }
        Ok(Self { weights, bias })
    }

    pub fn random<R: Rng + ?Sized>(
        labels: usize,
        inputs: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let scale = (6.0 / (labels + inputs) as f64).sqrt();
        let w = Matrix::random(labels, inputs, scale, rng);
        let bias = with_bias.then(|| vec![0.0; labels]);
        Self::new(w, bias)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub(crate) fn bias_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.bias.as_mut()
    }

    pub fn with_bias(mut self, bias: Vec<f64>) -> Result<Self> {
        ensure_dim("softmax bias", self.weights.rows(), bias.len())?;
        ensure_finite("softmax bias", &bias)?;
        self.bias = Some(bias);
        Ok(self)
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }

    pub fn num_params(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.weights.matvec(x)?;
        if let Some(b) = &self.bias {
            z.iter_mut().zip(b).for_each(|(zi, bi)| *zi += bi);
        }
        Ok(z)
    }

    /// Backward pass from a logit-space gradient `g`: returns `(Wᵀ g, ∂W ⊕ ∂b)`.
    pub(crate) fn backward(&self, input: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let grad_in = self.weights.matvec_t(g)?;
        let mut grad_params = Vec::with_capacity(self.num_params());
        for gi in g {
            grad_params.extend(input.iter().map(|a| gi * a));
        }
        if self.bias.is_some() {
            grad_params.extend_from_slice(g);
        }
        Ok((grad_in, grad_params))
    }
}

/// Cross-entropy `−(Wx)_y + log Σ exp(Wx)` with its gradients.
pub fn softmax_ce_loss(model: &LinearSoftmax, x: &[f64], y: usize) -> Result<LossEval> {
    let k = model.weights.rows();
    if y >= k {
        return Err(Error::invalid(format!(
            "label {y} out of range for {k} labels"
        )));
    }
    let z = model.logits(x)?;
    let value = log_sum_exp(&z) - z[y];
    let mut g = softmax(&z);
    g[y] -= 1.0;
    let (grad_x, grad_params) = model.backward(x, &g)?;
    Ok(LossEval {
        value,
        grad_x,
        grad_params,
    })
}

impl Classifier for LinearSoftmax {
    fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    fn label_count(&self) -> usize {
        self.weights.rows()
    }

    fn loss(&self, x: &[f64], y: usize) -> Result<f64> {
        let z = self.logits(x)?;
        if y >= z.len() {
            return Err(Error::invalid(format!("label {y} out of range")));
        }
        Ok(log_sum_exp(&z) - z[y])
    }

    fn loss_grad_x(&self, x: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
        let e = softmax_ce_loss(self, x, y)?;
        Ok((e.value, e.grad_x))
    }

    fn losses_all_labels(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(ce_from_logits(&self.logits(x)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_log_k() {
        for k in 2..6 {
            let m = LinearSoftmax::new(Matrix::zeros(k, 3), None).unwrap();
            let e = softmax_ce_loss(&m, &[0.3, -1.0, 2.0], 1).unwrap();
            assert!((e.value - (k as f64).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_logits_give_log_two() {
        let m =
            LinearSoftmax::new(Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(), None).unwrap();
        let e = softmax_ce_loss(&m, &[0.0], 0).unwrap();
        assert!((e.value - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn stable_for_huge_logits() {
        let m = LinearSoftmax::new(
            Matrix::from_rows(&[vec![1000.0], vec![-1000.0]]).unwrap(),
            None,
        )
        .unwrap();
        let e = softmax_ce_loss(&m, &[1.0], 1).unwrap();
        assert!((e.value - 2000.0).abs() < 1e-9);
        assert!(e.grad_x.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn bad_label_and_dims() {
        let m = LinearSoftmax::new(Matrix::zeros(2, 2), None).unwrap();
        assert!(softmax_ce_loss(&m, &[0.0, 0.0], 2).is_err());
        assert!(matches!(
            softmax_ce_loss(&m, &[0.0], 0),
            Err(Error::Dimension { .. })
        ));
        assert!(LinearSoftmax::new(Matrix::zeros(1, 2), None).is_err());
    }
}
