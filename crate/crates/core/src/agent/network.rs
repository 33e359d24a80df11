//! Fully connected tanh networks with hand-written backpropagation.
//!
//! Parameter layout (flat `Vec<f64>`): for each layer in order, the weight
//! matrix row-major as `[out][in]`, followed by the `out` biases. Hidden
//! layers use `tanh`; the output layer is linear.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Per-layer outputs of one forward pass; `layers[0]` is the input.
#[derive(Debug, Clone)]
pub struct Activations {
    pub layers: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Weights uniform in `±1/√fan_in` (times `output_scale` on the last
    /// layer), biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: Vec<usize>, output_scale: f64, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(
                "network",
                "need at least an input and an output layer, all non-empty",
            ));
        }
        let mut params = Vec::with_capacity(param_count(&sizes));
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt() * if l == last { output_scale } else { 1.0 };
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-1.0..=1.0) * bound));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Ok(Mlp { sizes, params })
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap_or(&0)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut acts = x.to_vec();
        let mut offset = 0;
        let layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            acts = self.layer(offset, w[0], w[1], &acts, l + 1 < layers);
            offset += w[0] * w[1] + w[1];
        }
        acts
    }

    pub fn forward_cached(&self, x: &[f64]) -> Activations {
        let mut layers = vec![x.to_vec()];
        let mut offset = 0;
        let count = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let next = self.layer(
                offset,
                w[0],
                w[1],
                layers.last().map(Vec::as_slice).unwrap_or(&[]),
                l + 1 < count,
            );
            layers.push(next);
            offset += w[0] * w[1] + w[1];
        }
        Activations { layers }
    }

    fn layer(
        &self,
        offset: usize,
        fan_in: usize,
        fan_out: usize,
        input: &[f64],
        hidden: bool,
    ) -> Vec<f64> {
        let weights = &self.params[offset..offset + fan_in * fan_out];
        let biases = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        weights
            .chunks_exact(fan_in)
            .zip(biases)
            .map(|(row, b)| {
                let z = dot(row, input) + b;
                if hidden {
                    z.tanh()
                } else {
                    z
                }
            })
            .collect()
    }

    /// Accumulate `∂L/∂params` into `grad` given `∂L/∂output`.
    pub fn backward(&self, acts: &Activations, grad_out: &[f64], grad: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.sizes.len() - 1);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..self.sizes.len() - 1).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let base = offsets[l];
            let input = &acts.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                for (g, &x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
                grad[base + fan_in * fan_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[base..base + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (row, &d) in weights.chunks_exact(fan_in).zip(&delta) {
                if d == 0.0 {
                    continue;
                }
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            for (p, &a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }
}

/// Dot product with four independent accumulators, which lets the
/// compiler vectorize it.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (a4, b4) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = a4
        .remainder()
        .iter()
        .zip(b4.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in a4.zip(b4) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-5,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}
