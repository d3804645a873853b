use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Fully connected network: hidden layers use their own activation, the
/// output layer is linear. All parameters live in one flat vector, layer by
/// layer, each layer storing its `out x in` weight matrix (row-major)
/// followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    offsets: Vec<usize>,
    seed: u64,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// `layers[0]` is the input, `layers[l + 1]` the output of layer `l`.
    layers: Vec<Vec<f64>>,
}

impl Tape {
    pub fn input(&self) -> &[f64] {
        &self.layers[0]
    }

    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("tape has an input")
    }
}

impl Mlp {
    /// Random network with the same activation on every hidden layer.
    /// Weights are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases
    /// start at zero.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let hidden = sizes.len().saturating_sub(2);
        Self::with_activations(sizes, &vec![activation; hidden], rng)
    }

    pub fn with_activations(sizes: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros_with(sizes, activations)?;
        net.seed = rng.seed();
        for l in 0..net.num_layers() {
            let limit = 1.0 / (net.sizes[l] as f64).sqrt();
            let (w, _) = net.layer_mut(l);
            for x in w.iter_mut() {
                *x = rng.uniform_range(-limit, limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        let hidden = sizes.len().saturating_sub(2);
        Self::zeros_with(sizes, &vec![activation; hidden])
    }

    pub(crate) fn zeros_from(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        let mut net = Self::zeros_with(sizes, activations)?;
        net.seed = seed;
        Ok(net)
    }

    fn zeros_with(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "layer sizes must have at least two positive entries, got {sizes:?}"
            )));
        }
        if activations.len() != sizes.len() - 2 {
            return Err(Error::DimensionMismatch {
                expected: sizes.len() - 2,
                got: activations.len(),
            });
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for w in sizes.windows(2) {
            offsets.push(total);
            total += w[0] * w[1] + w[1];
        }
        offsets.push(total);
        Ok(Self {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; total],
            offsets,
            seed: 0,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Weight matrix (`out x in`, row-major) and bias of layer `l`.
    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.offsets[l];
        let block = &mut self.params[start..start + fan_in * fan_out + fan_out];
        block.split_at_mut(fan_in * fan_out)
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.offsets[l];
        let block = &self.params[start..start + fan_in * fan_out + fan_out];
        block.split_at(fan_in * fan_out)
    }

    fn activation_of(&self, l: usize) -> Activation {
        self.activations.get(l).copied().unwrap_or(Activation::Linear)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn layer_forward(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let (w, b) = self.layer(l);
        let act = self.activation_of(l);
        let fan_in = self.sizes[l];
        b.iter()
            .enumerate()
            .map(|(i, &bias)| {
                let row = &w[i * fan_in..(i + 1) * fan_in];
                let z = bias + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
                act.apply(z)
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for l in 0..self.num_layers() {
            h = self.layer_forward(l, &h);
        }
        Ok(h)
    }

    /// Forward pass that records what [`Mlp::backward`] needs.
    pub fn forward_tape(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(x)?;
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(x.to_vec());
        for l in 0..self.num_layers() {
            let next = self.layer_forward(l, &layers[l]);
            layers.push(next);
        }
        let out = layers.last().unwrap().clone();
        Ok((out, Tape { layers }))
    }

    /// Reverse-mode pass for the recorded forward: adds `d loss / d params`
    /// into `grads` and returns `d loss / d input`.
    pub fn backward(&self, tape: &Tape, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if tape.layers.len() != self.sizes.len()
            || tape.layers.iter().zip(&self.sizes).any(|(v, &n)| v.len() != n)
        {
            return Err(Error::InvalidParameter(
                "tape was not recorded by a forward pass of this network".into(),
            ));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let act = self.activation_of(l);
            let out = &tape.layers[l + 1];
            for (d, &y) in delta.iter_mut().zip(out) {
                *d *= act.derivative_from_output(y);
            }
            let input = &tape.layers[l];
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let start = self.offsets[l];
            let (gw, gb) = grads[start..start + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let (w, _) = self.layer(l);
            let mut next = vec![0.0; fan_in];
            for i in 0..fan_out {
                let di = delta[i];
                if di == 0.0 {
                    continue;
                }
                gb[i] += di;
                let row = i * fan_in..(i + 1) * fan_in;
                for ((g, &x), (n, &wij)) in gw[row.clone()]
                    .iter_mut()
                    .zip(input)
                    .zip(next.iter_mut().zip(&w[row]))
                {
                    *g += di * x;
                    *n += di * wij;
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}
