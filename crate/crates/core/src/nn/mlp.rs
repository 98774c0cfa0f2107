use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

/// What the last layer produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Probability vector from a softmax over the last layer's logits.
    Softmax,
    /// Raw affine output (a scalar value head when the last width is 1).
    Linear,
    /// Last layer passed through the hidden activation; used for trunks.
    Activated,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::Softmax => "softmax",
            Head::Linear => "linear",
            Head::Activated => "activated",
        }
    }
}

/// Feed-forward network with parameters in one flat vector.
///
/// Layer `k` stores its weight matrix (`dims[k+1]` rows by `dims[k]` columns,
/// row-major) followed by its bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    head: Head,
    params: Vec<f64>,
}

/// Activations recorded during a forward pass.
#[derive(Clone, Debug)]
pub struct MlpTape {
    /// `layers[0]` is the input, `layers[k]` the output of layer `k-1`
    /// (for the last layer: the logits / raw output).
    layers: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Pre-softmax values of the last layer.
    pub fn logits(&self) -> &[f64] {
        self.layers.last().expect("non-empty tape")
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| (e / sum).max(f64::MIN_POSITIVE)).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// Zero-initialized network.
    pub fn zeros(dims: &[usize], activation: Activation, head: Head) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(NnError::Shape(format!("invalid layer dims {dims:?}")));
        }
        Ok(Mlp { dims: dims.to_vec(), activation, head, params: vec![0.0; param_count(dims)] })
    }

    /// Uniform fan-in initialization; the last layer is scaled by `out_gain`.
    pub fn random(
        dims: &[usize],
        activation: Activation,
        head: Head,
        out_gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let mut net = Mlp::zeros(dims, activation, head)?;
        let n_layers = dims.len() - 1;
        let mut off = 0;
        for k in 0..n_layers {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let gain = if k + 1 == n_layers { out_gain } else { 1.0 };
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = gain * rng.gen_range(-bound..bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(
        dims: &[usize],
        activation: Activation,
        head: Head,
        params: Vec<f64>,
    ) -> Result<Self, NnError> {
        let mut net = Mlp::zeros(dims, activation, head)?;
        if params.len() != net.params.len() {
            return Err(NnError::Shape(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated")
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// `(weights, bias)` slices of layer `k`.
    pub fn layer(&self, k: usize) -> (&[f64], &[f64]) {
        let off = self.layer_offset(k);
        let (i, o) = (self.dims[k], self.dims[k + 1]);
        (&self.params[off..off + i * o], &self.params[off + i * o..off + i * o + o])
    }

    fn layer_offset(&self, k: usize) -> usize {
        param_count(&self.dims[..=k])
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpTape), NnError> {
        let tape = self.forward_tape(input)?;
        Ok((tape.output.clone(), tape))
    }

    pub fn forward_tape(&self, input: &[f64]) -> Result<MlpTape, NnError> {
        if input.len() != self.dims[0] {
            return Err(NnError::Shape(format!(
                "input length {} != {}",
                input.len(),
                self.dims[0]
            )));
        }
        let n_layers = self.dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers + 1);
        layers.push(input.to_vec());
        let mut off = 0;
        for k in 0..n_layers {
            let (fan_in, fan_out) = (self.dims[k], self.dims[k + 1]);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let x = &layers[k];
            let last = k + 1 == n_layers;
            let activate = !last || self.head == Head::Activated;
            let y: Vec<f64> = (0..fan_out)
                .map(|r| {
                    let row = &w[r * fan_in..(r + 1) * fan_in];
                    let z = b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    if activate {
                        self.activation.apply(z)
                    } else {
                        z
                    }
                })
                .collect();
            layers.push(y);
            off += fan_in * fan_out + fan_out;
        }
        let last = layers.last().expect("non-empty");
        let output = match self.head {
            Head::Softmax => softmax(last),
            Head::Linear | Head::Activated => last.clone(),
        };
        Ok(MlpTape { layers, output })
    }

    /// Convenience forward returning the output only.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_tape(input)?.output)
    }

    /// Gradients of all parameters given `upstream` = dL/d(output).
    pub fn backward(&self, tape: &MlpTape, upstream: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut grads = vec![0.0; self.params.len()];
        self.backward_into(tape, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates parameter gradients for dL/d(output) into `grads` and
    /// returns dL/d(input).
    pub fn backward_into(
        &self,
        tape: &MlpTape,
        upstream: &[f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>, NnError> {
        if upstream.len() != self.output_dim() {
            return Err(NnError::Shape(format!(
                "upstream length {} != {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let raw = match self.head {
            Head::Softmax => {
                let p = &tape.output;
                let dot: f64 = p.iter().zip(upstream).map(|(a, b)| a * b).sum();
                p.iter().zip(upstream).map(|(pi, gi)| pi * (gi - dot)).collect()
            }
            Head::Linear | Head::Activated => upstream.to_vec(),
        };
        self.backward_raw_into(tape, &raw, grads)
    }

    /// Like [`Mlp::backward_into`] but takes the gradient with respect to the
    /// last layer's raw output (the logits for a softmax head).
    pub fn backward_raw_into(
        &self,
        tape: &MlpTape,
        raw_upstream: &[f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>, NnError> {
        if grads.len() != self.params.len() || tape.layers.len() != self.dims.len() {
            return Err(NnError::Shape("gradient buffer or tape does not match network".into()));
        }
        if raw_upstream.len() != self.output_dim() {
            return Err(NnError::Shape("upstream length mismatch".into()));
        }
        let n_layers = self.dims.len() - 1;
        let mut delta = raw_upstream.to_vec();
        if self.head == Head::Activated {
            for (d, y) in delta.iter_mut().zip(&tape.layers[n_layers]) {
                *d *= self.activation.grad_from_output(*y);
            }
        }
        for k in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.dims[k], self.dims[k + 1]);
            let off = self.layer_offset(k);
            let x = &tape.layers[k];
            let w = &self.params[off..off + fan_in * fan_out];
            {
                let (gw, gb) = grads[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for r in 0..fan_out {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    gb[r] += d;
                    for (g, xi) in gw[r * fan_in..(r + 1) * fan_in].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            let mut dx = vec![0.0; fan_in];
            for r in 0..fan_out {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                for (acc, wi) in dx.iter_mut().zip(&w[r * fan_in..(r + 1) * fan_in]) {
                    *acc += d * wi;
                }
            }
            if k > 0 {
                for (d, y) in dx.iter_mut().zip(x) {
                    *d *= self.activation.grad_from_output(*y);
                }
            }
            delta = dx;
        }
        Ok(delta)
    }
}
