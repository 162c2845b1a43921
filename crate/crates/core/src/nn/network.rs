//! Dense ReLU classifier with hand-written backpropagation.
//!
//! Weights of layer `l` are stored row-major with shape `(in_dim, out_dim)`,
//! so a batch `X` (rows are samples) maps to `X · W + b`. Every hidden layer
//! applies ReLU; the last layer emits raw logits.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{add_transpose_product, affine, product_transpose, Matrix};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Topology {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let topology = Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
        };
        topology.validate()?;
        Ok(topology)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(invalid(format!(
                "topology needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(invalid("topology dimensions must be positive"));
        }
        Ok(())
    }

    /// `(in, out)` for every affine layer, input to logits.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.is_finite())
    }
}

/// Parameters of one network plus its momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    topology: Topology,
    seed: u64,
    layers: Vec<Dense>,
    momentum: Vec<Dense>,
}

/// Gradients with the same layout as [`ModelParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// Flat view over all weights then biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

/// Intermediate values of a forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (the batch itself for layer 0).
    inputs: Vec<Matrix>,
    /// Pre-activations of each hidden layer.
    pre_activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

/// Scaled-uniform weights in `[-1/√fan_in, 1/√fan_in]`, zero biases and zero
/// momentum. The same `(topology, seed)` always yields identical parameters.
pub fn init_params(topology: &Topology, seed: u64) -> Result<ModelParams> {
    topology.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut momentum = Vec::new();
    for (fan_in, fan_out) in topology.layer_shapes() {
        let limit = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        let mut layer = Dense::zeros(fan_in, fan_out);
        for w in &mut layer.weights {
            *w = dist.sample(&mut rng);
        }
        layers.push(layer);
        momentum.push(Dense::zeros(fan_in, fan_out));
    }
    Ok(ModelParams {
        topology: topology.clone(),
        seed,
        layers,
        momentum,
    })
}

impl ModelParams {
    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn momentum(&self) -> &[Dense] {
        &self.momentum
    }

    pub fn num_classes(&self) -> usize {
        self.topology.num_classes
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .chain(&self.momentum)
            .all(Dense::is_finite)
    }

    /// All weights then biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Inverse of [`ModelParams::flatten`]; momentum is left untouched.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self
            .layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum();
        if flat.len() != total {
            return Err(invalid(format!(
                "flat parameter vector has {} entries, expected {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = layer.biases.len();
            layer.biases.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Rebuilds parameters from raw parts, checking every shape.
    pub fn from_parts(
        topology: Topology,
        seed: u64,
        layers: Vec<Dense>,
        momentum: Vec<Dense>,
    ) -> Result<Self> {
        topology.validate()?;
        let shapes = topology.layer_shapes();
        let consistent = |set: &[Dense]| {
            set.len() == shapes.len()
                && set.iter().zip(&shapes).all(|(l, &(i, o))| {
                    l.in_dim == i
                        && l.out_dim == o
                        && l.weights.len() == i * o
                        && l.biases.len() == o
                })
        };
        if !consistent(&layers) || !consistent(&momentum) {
            return Err(invalid("layer shapes do not match topology"));
        }
        Ok(Self {
            topology,
            seed,
            layers,
            momentum,
        })
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.biases);
    }
    out
}

/// Logits for a batch, plus the cache [`backward`] needs.
pub fn forward(params: &ModelParams, features: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if features.cols() != params.topology.input_dim {
        return Err(invalid(format!(
            "feature width {} does not match input_dim {}",
            features.cols(),
            params.topology.input_dim
        )));
    }
    let activation = params.topology.activation;
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre_activations = Vec::with_capacity(last);
    let mut current = features.clone();
    for (idx, layer) in params.layers.iter().enumerate() {
        let z = affine(&current, &layer.weights, &layer.biases);
        inputs.push(current);
        if idx == last {
            return Ok((
                z,
                ForwardCache {
                    inputs,
                    pre_activations,
                },
            ));
        }
        let mut a = z.clone();
        for v in a.as_mut_slice() {
            *v = activation.apply(*v);
        }
        pre_activations.push(z);
        current = a;
    }
    unreachable!("topology always has an output layer")
}

/// Logits only; convenience for evaluation.
pub fn predict_logits(params: &ModelParams, features: &Matrix) -> Result<Matrix> {
    forward(params, features).map(|(logits, _)| logits)
}

/// Exact gradients of a scalar loss with respect to every weight and bias,
/// given the loss gradient with respect to the logits.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_logits: &Matrix,
) -> Result<Gradients> {
    let n_layers = params.layers.len();
    if cache.inputs.len() != n_layers || cache.pre_activations.len() + 1 != n_layers {
        return Err(invalid("forward cache does not match parameter layers"));
    }
    for (layer, input) in params.layers.iter().zip(&cache.inputs) {
        if input.cols() != layer.in_dim || input.rows() != grad_logits.rows() {
            return Err(invalid("forward cache does not match parameter shapes"));
        }
    }
    if grad_logits.cols() != params.topology.num_classes {
        return Err(invalid(format!(
            "logit gradient has {} columns, expected {}",
            grad_logits.cols(),
            params.topology.num_classes
        )));
    }

    let activation = params.topology.activation;
    let mut grads = Gradients::zeros_like(params);
    let mut delta = grad_logits.clone();
    for idx in (0..n_layers).rev() {
        let layer = &params.layers[idx];
        let input = &cache.inputs[idx];
        let g = &mut grads.layers[idx];
        add_transpose_product(input, &delta, &mut g.weights);
        for row in delta.iter_rows() {
            for (b, &d) in g.biases.iter_mut().zip(row) {
                *b += d;
            }
        }
        if idx == 0 {
            break;
        }
        let mut upstream = product_transpose(&delta, &layer.weights, layer.in_dim);
        let z = &cache.pre_activations[idx - 1];
        for (u, &zv) in upstream.as_mut_slice().iter_mut().zip(z.as_slice()) {
            *u *= activation.derivative(zv);
        }
        delta = upstream;
    }
    Ok(grads)
}

/// Optimiser hyperparameters for [`sgd_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum:
/// `buf ← momentum·buf + grad + wd·param; param ← param − lr·buf`.
/// Biases are not decayed.
pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, cfg: SgdConfig) -> Result<()> {
    cfg.validate()?;
    if grads.layers.len() != params.layers.len()
        || grads
            .layers
            .iter()
            .zip(&params.layers)
            .any(|(g, p)| g.weights.len() != p.weights.len() || g.biases.len() != p.biases.len())
    {
        return Err(invalid("gradient shapes do not match parameters"));
    }
    if !grads.is_finite() {
        return Err(Error::TrainingFault("non-finite gradient".into()));
    }
    for ((layer, buf), grad) in params
        .layers
        .iter_mut()
        .zip(params.momentum.iter_mut())
        .zip(&grads.layers)
    {
        for ((w, b), &g) in layer
            .weights
            .iter_mut()
            .zip(buf.weights.iter_mut())
            .zip(&grad.weights)
        {
            *b = cfg.momentum * *b + g + cfg.weight_decay * *w;
            *w -= cfg.lr * *b;
        }
        for ((w, b), &g) in layer
            .biases
            .iter_mut()
            .zip(buf.biases.iter_mut())
            .zip(&grad.biases)
        {
            *b = cfg.momentum * *b + g;
            *w -= cfg.lr * *b;
        }
    }
    if !params.is_finite() {
        return Err(Error::TrainingFault(
            "parameters became non-finite after update".into(),
        ));
    }
    Ok(())
}
