//! Small dense networks with hand-written backpropagation.
//!
//! Parameters live in one flat vector so that the optimizer, the target
//! network blend and checkpointing all work on plain slices. Each layer owns a
//! contiguous block: the weight matrix in row-major order (`outputs × inputs`)
//! followed by the bias vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(inputs: usize, outputs: usize, activation: Activation) -> Self {
        LayerSpec {
            inputs,
            outputs,
            activation,
        }
    }

    fn n_params(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

/// Per-layer values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; the last entry is the output.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    /// Same layout as [`Mlp::params`].
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl Mlp {
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        check_chain(&layers)?;
        let n = layers.iter().map(LayerSpec::n_params).sum();
        Ok(Mlp {
            layers,
            params: vec![0.0; n],
        })
    }

    pub fn from_params(layers: Vec<LayerSpec>, params: Vec<f64>) -> Result<Self> {
        check_chain(&layers)?;
        let n: usize = layers.iter().map(LayerSpec::n_params).sum();
        if params.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite network parameter".into()));
        }
        Ok(Mlp { layers, params })
    }

    /// Fan-in uniform initialization, `U(−1/√fan_in, 1/√fan_in)`, with the
    /// last layer additionally multiplied by `last_layer_scale`.
    pub fn random<R: Rng + ?Sized>(
        layers: Vec<LayerSpec>,
        last_layer_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Mlp::zeros(layers)?;
        let n_layers = net.layers.len();
        let mut offset = 0;
        for (l, spec) in net.layers.iter().enumerate() {
            let bound = 1.0 / (spec.inputs as f64).sqrt();
            let scale = if l + 1 == n_layers {
                last_layer_scale
            } else {
                1.0
            };
            for p in &mut net.params[offset..offset + spec.n_params()] {
                *p = rng.random_range(-bound..bound) * scale;
            }
            offset += spec.n_params();
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    /// Weight block and bias block of layer `l`.
    pub fn layer_params(&self, l: usize) -> (&[f64], &[f64]) {
        let offset: usize = self.layers[..l].iter().map(LayerSpec::n_params).sum();
        let spec = self.layers[l];
        let w_end = offset + spec.outputs * spec.inputs;
        (
            &self.params[offset..w_end],
            &self.params[w_end..w_end + spec.outputs],
        )
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_cached(input)?;
        Ok(cache.activations.into_iter().last().unwrap_or_default())
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        let mut offset = 0;
        for spec in &self.layers {
            let x = activations.last().expect("input pushed above");
            let weights = &self.params[offset..offset + spec.outputs * spec.inputs];
            let bias = &self.params[offset + spec.outputs * spec.inputs..offset + spec.n_params()];
            let z: Vec<f64> = weights
                .chunks_exact(spec.inputs)
                .zip(bias)
                .map(|(row, b)| b + dot(row, x))
                .collect();
            let y = z.iter().map(|&zi| spec.activation.apply(zi)).collect();
            pre_activations.push(z);
            activations.push(y);
            offset += spec.n_params();
        }
        Ok(ForwardCache {
            activations,
            pre_activations,
        })
    }

    /// Backpropagates `upstream` (∂L/∂output) through a cached pass, adding
    /// the parameter gradient into `param_grad` and returning ∂L/∂input.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        param_grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if param_grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                got: param_grad.len(),
            });
        }
        let mut offset = self.params.len();
        let mut delta_out = upstream.to_vec();
        for (l, spec) in self.layers.iter().enumerate().rev() {
            offset -= spec.n_params();
            let z = &cache.pre_activations[l];
            let y = &cache.activations[l + 1];
            let x = &cache.activations[l];
            let delta: Vec<f64> = delta_out
                .iter()
                .zip(z.iter().zip(y))
                .map(|(d, (&zi, &yi))| d * spec.activation.derivative(zi, yi))
                .collect();

            let w_len = spec.outputs * spec.inputs;
            let (gw, gb) = param_grad[offset..offset + spec.n_params()].split_at_mut(w_len);
            for ((row, gbi), &di) in gw.chunks_exact_mut(spec.inputs).zip(gb).zip(&delta) {
                *gbi += di;
                if di != 0.0 {
                    for (g, xj) in row.iter_mut().zip(x) {
                        *g += di * xj;
                    }
                }
            }

            let weights = &self.params[offset..offset + w_len];
            let mut delta_in = vec![0.0; spec.inputs];
            for (row, &di) in weights.chunks_exact(spec.inputs).zip(&delta) {
                if di != 0.0 {
                    for (acc, w) in delta_in.iter_mut().zip(row) {
                        *acc += di * w;
                    }
                }
            }
            delta_out = delta_in;
        }
        Ok(delta_out)
    }

    /// Gradient of `upstreamᵀ · f(input)` with respect to every parameter and
    /// to the input.
    pub fn gradient(&self, input: &[f64], upstream: &[f64]) -> Result<MlpGradient> {
        let cache = self.forward_cached(input)?;
        let mut params = vec![0.0; self.params.len()];
        let input = self.backward_into(&cache, upstream, &mut params)?;
        Ok(MlpGradient { params, input })
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers == other.layers
    }
}

fn check_chain(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("network needs at least one layer".into()));
    }
    for spec in layers {
        if spec.inputs == 0 || spec.outputs == 0 {
            return Err(Error::InvalidArgument("layer with zero width".into()));
        }
    }
    for pair in layers.windows(2) {
        if pair[0].outputs != pair[1].inputs {
            return Err(Error::ShapeMismatch {
                expected: pair[0].outputs,
                got: pair[1].inputs,
            });
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `target ← (1 − τ) target + τ source`
pub fn soft_update(target: &mut Mlp, source: &Mlp, tau: f64) -> Result<()> {
    if !target.same_shape(source) {
        return Err(Error::ShapeMismatch {
            expected: target.params.len(),
            got: source.params.len(),
        });
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
    }
    for (t, s) in target.params.iter_mut().zip(&source.params) {
        *t = (1.0 - tau) * *t + tau * s;
    }
    Ok(())
}

/// Adaptive-moment optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One bias-corrected descent step: `params ← params − lr m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                got: grads.len().min(params.len()),
            });
        }
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Fault("non-finite gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// On-disk form of a network: layer specs with row-major weights.
///
/// Key order per layer: `inputs`, `outputs`, `activation`, `weights`
/// (`outputs × inputs`, row-major), `bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub layers: Vec<LayerCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<&Mlp> for MlpCheckpoint {
    fn from(net: &Mlp) -> Self {
        let layers = (0..net.layers.len())
            .map(|l| {
                let spec = net.layers[l];
                let (w, b) = net.layer_params(l);
                LayerCheckpoint {
                    inputs: spec.inputs,
                    outputs: spec.outputs,
                    activation: spec.activation,
                    weights: w.to_vec(),
                    bias: b.to_vec(),
                }
            })
            .collect();
        MlpCheckpoint { layers }
    }
}

impl TryFrom<MlpCheckpoint> for Mlp {
    type Error = Error;

    fn try_from(ckpt: MlpCheckpoint) -> Result<Self> {
        let mut specs = Vec::with_capacity(ckpt.layers.len());
        let mut params = Vec::new();
        for layer in ckpt.layers {
            if layer.weights.len() != layer.inputs * layer.outputs {
                return Err(Error::ShapeMismatch {
                    expected: layer.inputs * layer.outputs,
                    got: layer.weights.len(),
                });
            }
            if layer.bias.len() != layer.outputs {
                return Err(Error::ShapeMismatch {
                    expected: layer.outputs,
                    got: layer.bias.len(),
                });
            }
            specs.push(LayerSpec::new(layer.inputs, layer.outputs, layer.activation));
            params.extend(layer.weights);
            params.extend(layer.bias);
        }
        Mlp::from_params(specs, params)
    }
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MlpCheckpoint::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ckpt = MlpCheckpoint::deserialize(d)?;
        Mlp::try_from(ckpt).map_err(serde::de::Error::custom)
    }
}
