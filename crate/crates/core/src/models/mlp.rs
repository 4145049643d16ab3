use rand::Rng;
use serde::{Deserialize, Serialize};

use super::softmax::{log_sum_exp, softmax};
use super::{ce_from_logits, Activation, Classifier, LinearSoftmax, LossEval};
use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::numerics::Matrix;

/// One hidden layer `x ↦ α(W x + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Option<Vec<f64>>, activation: Activation) -> Result<Self> {
        if let Some(b) = &bias {
            ensure_dim("layer bias", weights.rows(), b.len())?;
            ensure_finite("layer bias", b)?;
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.weights.matvec(x)?;
        if let Some(b) = &self.bias {
            z.iter_mut().zip(b).for_each(|(zi, bi)| *zi += bi);
        }
        Ok(z)
    }

    fn num_params(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

/// A feed-forward network `h ∘ φ`: hidden layers `φ = φ_{l−1} ∘ … ∘ φ_1`
/// followed by a softmax head `h`. With no hidden layers it is exactly a
/// [`LinearSoftmax`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    hidden: Vec<Layer>,
    head: LinearSoftmax,
}

/// Forward pass record: `inputs[i]` feeds layer `i`, `pre[i]` is its
/// pre-activation. `inputs` has one extra entry, the feature vector `φ(x)`.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl Forward {
    pub fn features(&self) -> &[f64] {
        self.inputs
            .last()
            .expect("forward tape always holds the input")
    }
}

impl Mlp {
    pub fn new(hidden: Vec<Layer>, head: LinearSoftmax) -> Result<Self> {
        for pair in hidden.windows(2) {
            ensure_dim(
                "layer chaining",
                pair[0].weights.rows(),
                pair[1].weights.cols(),
            )?;
        }
        if let Some(last) = hidden.last() {
            ensure_dim("head input", last.weights.rows(), head.weights().cols())?;
        }
        Ok(Self { hidden, head })
    }

    pub fn linear(head: LinearSoftmax) -> Self {
        Self {
            hidden: Vec::new(),
            head,
        }
    }

    /// Random network with layer widths `dims = [input, hidden…, labels]`.
    pub fn random<R: Rng + ?Sized>(
        dims: &[usize],
        activation: Activation,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid(
                "network needs at least input and output widths",
            ));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut hidden = Vec::new();
        for w in dims.windows(2).take(dims.len() - 2) {
            let scale = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let weights = Matrix::random(w[1], w[0], scale, rng);
            let bias = with_bias.then(|| vec![0.0; w[1]]);
            hidden.push(Layer::new(weights, bias, activation)?);
        }
        let n = dims.len();
        let head = LinearSoftmax::random(dims[n - 1], dims[n - 2], with_bias, rng)?;
        Self::new(hidden, head)
    }

    pub fn hidden(&self) -> &[Layer] {
        &self.hidden
    }

    pub fn head(&self) -> &LinearSoftmax {
        &self.head
    }

    /// Number of linear layers `l`, the head included.
    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    /// Layer widths `[input, hidden…, labels]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.hidden.iter().map(|l| l.weights.rows()));
        dims.push(self.head.weights().rows());
        dims
    }

    /// All weight matrices, hidden layers first, head last.
    pub fn weights(&self) -> Vec<&Matrix> {
        self.hidden
            .iter()
            .map(|l| &l.weights)
            .chain(std::iter::once(self.head.weights()))
            .collect()
    }

    pub fn weight_mut(&mut self, index: usize) -> &mut Matrix {
        if index < self.hidden.len() {
            &mut self.hidden[index].weights
        } else {
            self.head.weights_mut()
        }
    }

    /// The feature map `φ(x)` (identity when there are no hidden layers).
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut a = x.to_vec();
        for layer in &self.hidden {
            let z = layer.pre_activation(&a)?;
            a = z.into_iter().map(|v| layer.activation.apply(v)).collect();
        }
        Ok(a)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.head.logits(&self.features(x)?)
    }

    pub fn num_params(&self) -> usize {
        self.hidden.iter().map(Layer::num_params).sum::<usize>() + self.head.num_params()
    }

    /// Flattened parameters: per layer `W` row-major then `b`, head last.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.hidden {
            out.extend_from_slice(l.weights.as_slice());
            if let Some(b) = &l.bias {
                out.extend_from_slice(b);
            }
        }
        out.extend_from_slice(self.head.weights().as_slice());
        if let Some(b) = self.head.bias() {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        ensure_dim("parameter vector", self.num_params(), params.len())?;
        ensure_finite("parameter vector", params)?;
        let mut offset = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&params[offset..offset + dst.len()]);
            offset += dst.len();
        };
        for l in &mut self.hidden {
            take(l.weights.as_mut_slice());
            if let Some(b) = &mut l.bias {
                take(b);
            }
        }
        take(self.head.weights_mut().as_mut_slice());
        if let Some(b) = self.head.bias_mut() {
            take(b);
        }
        Ok(())
    }

    /// Offsets of each weight matrix inside the flattened parameter vector.
    pub fn weight_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.depth());
        let mut at = 0;
        for l in &self.hidden {
            offsets.push(at);
            at += l.num_params();
        }
        offsets.push(at);
        offsets
    }
}

pub fn mlp_forward(model: &Mlp, x: &[f64]) -> Result<Forward> {
    ensure_dim("network input", model.input_dim(), x.len())?;
    let mut inputs = vec![x.to_vec()];
    let mut pre = Vec::with_capacity(model.hidden.len());
    for layer in &model.hidden {
        let z = layer.pre_activation(inputs.last().unwrap())?;
        inputs.push(z.iter().map(|v| layer.activation.apply(*v)).collect());
        pre.push(z);
    }
    let logits = model.head.logits(inputs.last().unwrap())?;
    Ok(Forward {
        logits,
        inputs,
        pre,
    })
}

/// Cross-entropy after the network with exact reverse-mode gradients.
pub fn mlp_backprop(model: &Mlp, x: &[f64], y: usize) -> Result<LossEval> {
    let k = model.label_count();
    if y >= k {
        return Err(Error::invalid(format!(
            "label {y} out of range for {k} labels"
        )));
    }
    let fwd = mlp_forward(model, x)?;
    let value = log_sum_exp(&fwd.logits) - fwd.logits[y];
    let mut g = softmax(&fwd.logits);
    g[y] -= 1.0;

    let (mut delta, head_grad) = model.head.backward(fwd.features(), &g)?;
    let mut blocks: Vec<Vec<f64>> = Vec::with_capacity(model.depth());
    blocks.push(head_grad);
    for (i, layer) in model.hidden.iter().enumerate().rev() {
        let dz: Vec<f64> = delta
            .iter()
            .zip(&fwd.pre[i])
            .map(|(d, z)| d * layer.activation.derivative(*z))
            .collect();
        let input = &fwd.inputs[i];
        let mut block = Vec::with_capacity(layer.num_params());
        for d in &dz {
            block.extend(input.iter().map(|a| d * a));
        }
        if layer.bias.is_some() {
            block.extend_from_slice(&dz);
        }
        blocks.push(block);
        delta = layer.weights.matvec_t(&dz)?;
    }
    blocks.reverse();
    Ok(LossEval {
        value,
        grad_x: delta,
        grad_params: blocks.concat(),
    })
}

impl Classifier for Mlp {
    fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.head.weights().cols(), |l| l.weights.cols())
    }

    fn label_count(&self) -> usize {
        self.head.weights().rows()
    }

    fn loss(&self, x: &[f64], y: usize) -> Result<f64> {
        let z = self.logits(x)?;
        if y >= z.len() {
            return Err(Error::invalid(format!("label {y} out of range")));
        }
        Ok(log_sum_exp(&z) - z[y])
    }

    fn loss_grad_x(&self, x: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
        let e = mlp_backprop(self, x, y)?;
        Ok((e.value, e.grad_x))
    }

    fn losses_all_labels(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(ce_from_logits(&self.logits(x)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::softmax_ce_loss;

    #[test]
    fn single_layer_is_linear_softmax() {
        let w = Matrix::from_rows(&[vec![1.0, -0.5], vec![0.2, 0.3], vec![-1.0, 2.0]]).unwrap();
        let lin = LinearSoftmax::new(w, Some(vec![0.1, 0.0, -0.1])).unwrap();
        let net = Mlp::linear(lin.clone());
        let x = [0.4, -1.3];
        let a = softmax_ce_loss(&lin, &x, 2).unwrap();
        let b = mlp_backprop(&net, &x, 2).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.grad_x, b.grad_x);
        assert_eq!(a.grad_params, b.grad_params);
    }

    #[test]
    fn identity_layers_collapse() {
        let layer = Layer::new(Matrix::identity(2), None, Activation::Identity).unwrap();
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.0]]).unwrap();
        let head = LinearSoftmax::new(w.clone(), None).unwrap();
        let net = Mlp::new(vec![layer.clone(), layer], head.clone()).unwrap();
        let x = [0.5, -0.25];
        assert_eq!(net.logits(&x).unwrap(), w.matvec(&x).unwrap());
    }

    #[test]
    fn zero_network_gradients_are_closed_form() {
        let layer = Layer::new(Matrix::zeros(3, 2), Some(vec![0.0; 3]), Activation::Relu).unwrap();
        let head = LinearSoftmax::new(Matrix::zeros(2, 3), Some(vec![0.0; 2])).unwrap();
        let net = Mlp::new(vec![layer], head).unwrap();
        let e = mlp_backprop(&net, &[0.0, 0.0], 0).unwrap();
        assert!((e.value - 2f64.ln()).abs() < 1e-15);
        // uniform p = (1/2, 1/2); only the head bias sees a nonzero gradient: p − e_0.
        let n = e.grad_params.len();
        assert_eq!(&e.grad_params[n - 2..], &[-0.5, 0.5]);
        assert!(e.grad_params[..n - 2].iter().all(|g| *g == 0.0));
        assert_eq!(e.grad_x, vec![0.0, 0.0]);
    }

    #[test]
    fn params_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        use rand::SeedableRng;
        let mut net = Mlp::random(&[3, 4, 5, 2], Activation::Tanh, true, &mut rng).unwrap();
        let p = net.params();
        assert_eq!(p.len(), net.num_params());
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        net.set_params(&shifted).unwrap();
        assert_eq!(net.params(), shifted);
        assert_eq!(net.dims(), vec![3, 4, 5, 2]);
        assert_eq!(net.weight_offsets(), vec![0, 16, 41]);
    }

    #[test]
    fn chaining_is_checked() {
        let l1 = Layer::new(Matrix::zeros(3, 2), None, Activation::Relu).unwrap();
        let head = LinearSoftmax::new(Matrix::zeros(2, 4), None).unwrap();
        assert!(Mlp::new(vec![l1], head).is_err());
    }
}
