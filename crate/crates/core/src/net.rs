//! Small dense feed-forward networks with exact reverse-mode gradients.
//!
//! Weights are stored row-major as `out_dim × in_dim`. The flat parameter
//! view is layer-major; within a layer the weights come first, then the
//! biases.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("layer {layer}: input width {found} does not match previous output {expected}")]
    DimMismatch { layer: usize, expected: usize, found: usize },
    #[error("layer {0} has a zero dimension")]
    ZeroDim(usize),
    #[error("network has no layers")]
    Empty,
    #[error("expected a vector of length {expected}, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("bad layer spec `{0}`")]
    Spec(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self { in_dim, out_dim, activation }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// `3x64:relu`
impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}:{}", self.in_dim, self.out_dim, self.activation.as_str())
    }
}

impl FromStr for LayerSpec {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NetError::Spec(s.to_string());
        let (dims, act) = s.trim().split_once(':').ok_or_else(bad)?;
        let (i, o) = dims.split_once('x').ok_or_else(bad)?;
        let activation = match act {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "linear" => Activation::Linear,
            _ => return Err(bad()),
        };
        Ok(Self {
            in_dim: i.parse().map_err(|_| bad())?,
            out_dim: o.parse().map_err(|_| bad())?,
            activation,
        })
    }
}

pub fn validate_specs(specs: &[LayerSpec]) -> Result<(), NetError> {
    if specs.is_empty() {
        return Err(NetError::Empty);
    }
    for (k, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(NetError::ZeroDim(k));
        }
        if k > 0 && specs[k - 1].out_dim != s.in_dim {
            return Err(NetError::DimMismatch { layer: k, expected: specs[k - 1].out_dim, found: s.in_dim });
        }
    }
    Ok(())
}

pub fn parameter_count(specs: &[LayerSpec]) -> usize {
    specs.iter().map(LayerSpec::param_count).sum()
}

/// Pyramid actor: state → 64 → 32 → tanh action.
pub fn actor_specs(state_dim: usize, hidden: &[usize]) -> Vec<LayerSpec> {
    pyramid(state_dim, hidden, Activation::Tanh)
}

/// Pyramid critic: (state ‖ action) → 64 → 32 → linear value.
pub fn critic_specs(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Vec<LayerSpec> {
    pyramid(state_dim + action_dim, hidden, Activation::Linear)
}

fn pyramid(input: usize, hidden: &[usize], output: Activation) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input;
    for &h in hidden {
        specs.push(LayerSpec::new(prev, h, Activation::Relu));
        prev = h;
    }
    specs.push(LayerSpec::new(prev, 1, output));
    specs
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(spec: LayerSpec) -> Self {
        Self { spec, weights: vec![0.0; spec.in_dim * spec.out_dim], biases: vec![0.0; spec.out_dim] }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Self {
        let bound = glorot_bound(&spec);
        let weights = (0..spec.in_dim * spec.out_dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { spec, weights, biases: vec![0.0; spec.out_dim] }
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        let n_in = self.spec.in_dim;
        out.clear();
        out.extend(self.weights.chunks_exact(n_in).zip(&self.biases).map(|(row, b)| {
            let z = row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi);
            self.spec.activation.apply(z)
        }));
    }
}

pub fn glorot_bound(spec: &LayerSpec) -> f64 {
    (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt()
}

/// Layer-ordered weights and biases of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    layers: Vec<Dense>,
}

/// Per-layer activations of one forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

/// Activations of a batched forward pass, each row-major `n × dim`.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    n: usize,
    acts: Vec<Vec<f64>>,
}

impl BatchTrace {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `n × output_dim`, row-major.
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds the input at least")
    }
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds the input at least")
    }

    /// Input for `k = 0`, otherwise the output of layer `k - 1`.
    pub fn activations(&self, k: usize) -> &[f64] {
        &self.acts[k]
    }
}

impl NetworkParams {
    pub fn init<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self, NetError> {
        validate_specs(specs)?;
        Ok(Self { layers: specs.iter().map(|&s| Dense::glorot(s, rng)).collect() })
    }

    pub fn zeros(specs: &[LayerSpec]) -> Result<Self, NetError> {
        validate_specs(specs)?;
        Ok(Self { layers: specs.iter().map(|&s| Dense::zeros(s)).collect() })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NetError> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        for l in &layers {
            let expected = l.spec.in_dim * l.spec.out_dim;
            if l.weights.len() != expected {
                return Err(NetError::Shape { expected, found: l.weights.len() });
            }
            if l.biases.len() != l.spec.out_dim {
                return Err(NetError::Shape { expected: l.spec.out_dim, found: l.biases.len() });
            }
        }
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.spec)).collect() }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    /// Offset of layer `idx` within the flat view.
    pub fn layer_offset(&self, idx: usize) -> usize {
        self.layers[..idx].iter().map(|l| l.spec.param_count()).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn unflatten(specs: &[LayerSpec], flat: &[f64]) -> Result<Self, NetError> {
        let mut net = Self::zeros(specs)?;
        net.set_flat(flat)?;
        Ok(net)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), NetError> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(NetError::Shape { expected, found: flat.len() });
        }
        for (dst, &src) in self.values_mut().zip(flat) {
            *dst = src;
        }
        Ok(())
    }

    /// Re-draws layer `idx` with Glorot weights and zero biases.
    pub fn reinit_layer<R: Rng + ?Sized>(&mut self, idx: usize, rng: &mut R) {
        let spec = self.layers[idx].spec;
        self.layers[idx] = Dense::glorot(spec, rng);
    }

    pub fn scale(&mut self, k: f64) {
        self.values_mut().for_each(|v| *v *= k);
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace, NetError> {
        self.check_input(x)?;
        Ok(self.trace_unchecked(x))
    }

    pub(crate) fn trace_unchecked(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.spec.out_dim);
            layer.forward_into(acts.last().expect("non-empty"), &mut out);
            acts.push(out);
        }
        Trace { acts }
    }

    /// Gradients of `outputᵀ · grad_out` with respect to every parameter and
    /// the input.
    pub fn backward(&self, x: &[f64], grad_out: &[f64]) -> Result<(NetworkParams, Vec<f64>), NetError> {
        let trace = self.trace(x)?;
        if grad_out.len() != self.output_dim() {
            return Err(NetError::Shape { expected: self.output_dim(), found: grad_out.len() });
        }
        let mut grads = self.zeros_like();
        let grad_in = self.accumulate_backward(&trace, grad_out, &mut grads);
        Ok((grads, grad_in))
    }

    /// Adds this trace's parameter gradients into `grads` and returns the
    /// input gradient.
    pub(crate) fn accumulate_backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut NetworkParams) -> Vec<f64> {
        let mut delta = grad_out.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &trace.acts[l + 1];
            let input = &trace.acts[l];
            for (d, &a) in delta.iter_mut().zip(out) {
                *d *= layer.spec.activation.derivative_from_output(a);
            }
            let g = &mut grads.layers[l];
            let n_in = layer.spec.in_dim;
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[j] += d;
                for (gw, &xi) in g.weights[j * n_in..(j + 1) * n_in].iter_mut().zip(input) {
                    *gw += d * xi;
                }
            }
            let mut prev = vec![0.0; n_in];
            for (row, &d) in layer.weights.chunks_exact(n_in).zip(&delta) {
                if d == 0.0 {
                    continue;
                }
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            delta = prev;
        }
        delta
    }

    /// Forward pass over `n` inputs stored row-major in `x`.
    pub fn trace_batch(&self, x: &[f64], n: usize) -> Result<BatchTrace, NetError> {
        if x.len() != n * self.input_dim() {
            return Err(NetError::Shape { expected: n * self.input_dim(), found: x.len() });
        }
        Ok(self.trace_batch_unchecked(x, n))
    }

    pub(crate) fn trace_batch_unchecked(&self, x: &[f64], n: usize) -> BatchTrace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let (n_in, n_out) = (layer.spec.in_dim, layer.spec.out_dim);
            let input = acts.last().expect("non-empty");
            let mut out = Vec::with_capacity(n * n_out);
            for _ in 0..n {
                out.extend_from_slice(&layer.biases);
            }
            // out (n×out) += input (n×in) · Wᵀ (in×out)
            unsafe {
                matrixmultiply::dgemm(
                    n, n_in, n_out, 1.0,
                    input.as_ptr(), n_in as isize, 1,
                    layer.weights.as_ptr(), 1, n_in as isize,
                    1.0,
                    out.as_mut_ptr(), n_out as isize, 1,
                );
            }
            let act = layer.spec.activation;
            if act != Activation::Linear {
                out.iter_mut().for_each(|z| *z = act.apply(*z));
            }
            acts.push(out);
        }
        BatchTrace { n, acts }
    }

    /// Batched [`accumulate_backward`](Self::accumulate_backward); `grad_out`
    /// is `n × output_dim` row-major. Parameter gradients are summed over the
    /// batch into `grads` when given. Returns the `n × input_dim` input
    /// gradient.
    pub(crate) fn accumulate_backward_batch(
        &self,
        trace: &BatchTrace,
        grad_out: &[f64],
        mut grads: Option<&mut NetworkParams>,
    ) -> Vec<f64> {
        let n = trace.n;
        let mut delta = grad_out.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (n_in, n_out) = (layer.spec.in_dim, layer.spec.out_dim);
            let act = layer.spec.activation;
            if act != Activation::Linear {
                for (d, &a) in delta.iter_mut().zip(&trace.acts[l + 1]) {
                    *d *= act.derivative_from_output(a);
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                let g = &mut g.layers[l];
                for row in delta.chunks_exact(n_out) {
                    for (b, &d) in g.biases.iter_mut().zip(row) {
                        *b += d;
                    }
                }
                // dW (out×in) += deltaᵀ (out×n) · input (n×in)
                unsafe {
                    matrixmultiply::dgemm(
                        n_out, n, n_in, 1.0,
                        delta.as_ptr(), 1, n_out as isize,
                        trace.acts[l].as_ptr(), n_in as isize, 1,
                        1.0,
                        g.weights.as_mut_ptr(), n_in as isize, 1,
                    );
                }
            }
            // prev (n×in) = delta (n×out) · W (out×in)
            let mut prev = vec![0.0; n * n_in];
            unsafe {
                matrixmultiply::dgemm(
                    n, n_out, n_in, 1.0,
                    delta.as_ptr(), n_out as isize, 1,
                    layer.weights.as_ptr(), n_in as isize, 1,
                    0.0,
                    prev.as_mut_ptr(), n_in as isize, 1,
                );
            }
            delta = prev;
        }
        delta
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::Shape { expected: self.input_dim(), found: x.len() });
        }
        Ok(())
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descends along `grads`.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams, lr: f64) {
        debug_assert_eq!(params.num_params(), self.m.len());
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, &g), m), v) in params.values_mut().zip(grads.values()).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
