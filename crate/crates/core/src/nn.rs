//! Feed-forward networks with an explicit forward trace and a hand-written
//! backward pass. Processing units and the control unit's Q-network are both
//! built from [`FeedForwardNet`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Activation::Identity, Activation::Relu, Activation::Tanh, Activation::Sigmoid];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the pre- and post-activation values.
    #[inline]
    pub fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Sigmoid => post * (1.0 - post),
        }
    }
}

/// Dense affine layer followed by an activation. Weights are row-major
/// `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weights: Vec<f64>, bias: Vec<f64>, in_dim: usize, activation: Activation) -> Result<Self> {
        let out_dim = bias.len();
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config("layer dimensions must be positive"));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::Shape { expected: in_dim * out_dim, actual: weights.len() });
        }
        Ok(Dense { in_dim, out_dim, weights, bias, activation })
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..=bound)).collect();
        let bias = (0..out_dim).map(|_| rng.gen_range(-bound..=bound)).collect();
        Dense { in_dim, out_dim, weights, bias, activation }
    }

    fn forward_into(&self, input: &[f64], pre: &mut Vec<f64>, post: &mut Vec<f64>) {
        pre.clear();
        post.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            let z = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b;
            pre.push(z);
            post.push(self.activation.apply(z));
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Ordered stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    layers: Vec<Dense>,
    /// Bumped on every parameter update; traces taken at another version are stale.
    #[serde(default)]
    version: u64,
}

/// Intermediate values of one forward pass, needed by [`FeedForwardNet::backward`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
    pub version: u64,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.input)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients with the same layout as a network's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
}

impl ParamGrads {
    pub fn zeros_like(net: &FeedForwardNet) -> Self {
        ParamGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn same_layout(&self, other: &ParamGrads) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.len() == b.weights.len() && a.bias.len() == b.bias.len())
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        debug_assert!(self.same_layout(other));
        self.iter_mut().zip(other.iter()).for_each(|(a, b)| *a += b);
    }

    /// Re-index the first layer's input columns; see [`FeedForwardNet::remap_inputs`].
    pub fn remap_inputs(&mut self, map: &[Option<usize>]) {
        if let Some(first) = self.layers.first_mut() {
            let out_dim = first.bias.len();
            let old_in = first.weights.len() / out_dim;
            first.weights = remap_columns(&first.weights, old_in, out_dim, map, 0.0);
        }
    }

    pub fn push_output(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            let in_dim = last.weights.len() / last.bias.len();
            last.weights.extend(std::iter::repeat(0.0).take(in_dim));
            last.bias.push(0.0);
        }
    }
}

fn remap_columns(weights: &[f64], old_in: usize, out_dim: usize, map: &[Option<usize>], fill: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_dim * map.len());
    for r in 0..out_dim {
        let row = &weights[r * old_in..(r + 1) * old_in];
        out.extend(map.iter().map(|m| m.map_or(fill, |j| row[j])));
    }
    out
}

impl FeedForwardNet {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape { expected: pair[0].out_dim, actual: pair[1].in_dim });
            }
        }
        Ok(FeedForwardNet { layers, version: 0 })
    }

    /// Random MLP: `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the
    /// last layer uses `output`.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::config(format!("invalid layer dims {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| Dense::random(dims[i], dims[i + 1], if i + 1 == n { output } else { hidden }, rng))
            .collect();
        FeedForwardNet::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.version += 1;
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), actual: input.len() });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = post.last().map(Vec::as_slice).unwrap_or(input);
            let mut z = Vec::with_capacity(layer.out_dim);
            let mut a = Vec::with_capacity(layer.out_dim);
            layer.forward_into(x, &mut z, &mut a);
            pre.push(z);
            post.push(a);
        }
        let output = post.last().cloned().unwrap_or_default();
        Ok((output, ForwardTrace { input: input.to_vec(), pre, post, version: self.version }))
    }

    /// Forward pass without keeping a trace.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), actual: input.len() });
        }
        let mut cur = input.to_vec();
        let (mut pre, mut post) = (Vec::new(), Vec::new());
        for layer in &self.layers {
            layer.forward_into(&cur, &mut pre, &mut post);
            std::mem::swap(&mut cur, &mut post);
        }
        Ok(cur)
    }

    pub fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.pre.len() != self.layers.len() || trace.post.len() != self.layers.len() {
            return Err(Error::StaleTrace(format!("{} layers traced, net has {}", trace.pre.len(), self.layers.len())));
        }
        if trace.input.len() != self.input_dim()
            || self.layers.iter().zip(&trace.pre).any(|(l, p)| p.len() != l.out_dim)
        {
            return Err(Error::StaleTrace("layer widths differ".into()));
        }
        if trace.version != self.version {
            return Err(Error::StaleTrace(format!(
                "trace taken at parameter version {}, net is at {}",
                trace.version, self.version
            )));
        }
        Ok(())
    }

    /// Backpropagate `output_grad` (dLoss/dOutput) through a matching trace.
    /// Returns dLoss/dInput and the parameter gradients.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &[f64]) -> Result<(Vec<f64>, ParamGrads)> {
        let mut grads = ParamGrads::zeros_like(self);
        let input_grad = self.backward_accumulate(trace, output_grad, &mut grads)?;
        Ok((input_grad, grads))
    }

    /// Like [`backward`](Self::backward) but adds into an existing gradient buffer.
    pub fn backward_accumulate(&self, trace: &ForwardTrace, output_grad: &[f64], grads: &mut ParamGrads) -> Result<Vec<f64>> {
        if output_grad.len() != self.output_dim() {
            return Err(Error::Shape { expected: self.output_dim(), actual: output_grad.len() });
        }
        self.check_trace(trace)?;
        let mut delta = output_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            let pre = &trace.pre[l];
            let post = &trace.post[l];
            for (i, d) in delta.iter_mut().enumerate() {
                *d *= layer.activation.derivative(pre[i], post[i]);
            }
            let g = &mut grads.layers[l];
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[i] += d;
                let row = &mut g.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
                row.iter_mut().zip(x).for_each(|(w, xj)| *w += d * xj);
            }
            let mut next = vec![0.0; layer.in_dim];
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
                next.iter_mut().zip(row).for_each(|(n, w)| *n += d * w);
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Re-index first-layer inputs. `map[j] = Some(i)` moves old column `i` to
    /// new column `j`; `None` inserts a zero column. Outputs are unchanged for
    /// inputs whose new columns are zero.
    pub fn remap_inputs(&mut self, map: &[Option<usize>]) {
        let first = &mut self.layers[0];
        first.weights = remap_columns(&first.weights, first.in_dim, first.out_dim, map, 0.0);
        first.in_dim = map.len();
        self.version += 1;
    }

    /// Append an output unit with zero incoming weights and the given bias.
    /// Only meaningful when the last layer is the identity.
    pub fn push_output(&mut self, bias: f64) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weights.extend(std::iter::repeat(0.0).take(last.in_dim));
        last.bias.push(bias);
        last.out_dim += 1;
        self.version += 1;
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape { expected: pred.len(), actual: target.len() });
    }
    if pred.is_empty() {
        return Err(Error::InvalidTensor("empty prediction".into()));
    }
    let n = pred.len() as f64;
    let diff: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.iter().map(|d| 2.0 * d / n).collect();
    Ok((loss, grad))
}
