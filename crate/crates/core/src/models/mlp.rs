use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, ParamBlock};
use crate::autodiff::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => crate::autodiff::sigmoid(x),
            Activation::Identity => x,
        }
    }

    pub fn apply_var(self, x: Var<'_>) -> Var<'_> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Identity => x,
        }
    }
}

/// Fully connected network shape. Parameters live outside, as one flat
/// vector laid out layer by layer: the weight matrix (rows = outputs,
/// row-major) followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub acts: Vec<Activation>,
}

impl Mlp {
    pub fn new(widths: Vec<usize>, acts: Vec<Activation>) -> Result<Self, ModelError> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(ModelError::Config(format!("bad layer widths {widths:?}")));
        }
        if acts.len() + 1 != widths.len() {
            return Err(ModelError::Config(format!(
                "{} layers need {} activations, got {}",
                widths.len() - 1,
                widths.len() - 1,
                acts.len()
            )));
        }
        Ok(Self { widths, acts })
    }

    /// Same activation on every hidden layer and `last` on the output layer.
    pub fn uniform(widths: Vec<usize>, hidden: Activation, last: Activation) -> Result<Self, ModelError> {
        let n = widths.len().saturating_sub(1);
        let acts = (0..n).map(|i| if i + 1 == n { last } else { hidden }).collect();
        Self::new(widths, acts)
    }

    pub fn n_in(&self) -> usize {
        self.widths[0]
    }

    pub fn n_out(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.acts.len()
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn blocks(&self, prefix: &str) -> Vec<ParamBlock> {
        let mut out = Vec::with_capacity(2 * self.n_layers());
        for (l, w) in self.widths.windows(2).enumerate() {
            out.push(ParamBlock::new(format!("{prefix}.{l}.weight"), vec![w[1], w[0]]));
            out.push(ParamBlock::new(format!("{prefix}.{l}.bias"), vec![w[1]]));
        }
        out
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for w in self.widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[1] * (w[0] + 1) {
                out.push(rng.random_range(-bound..bound));
            }
        }
        out
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(params.len(), self.n_params());
        let mut h = input.to_vec();
        let mut off = 0;
        for (w, act) in self.widths.windows(2).zip(&self.acts) {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_out * (n_in + 1)];
            h = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    act.apply(bias[o] + row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>())
                })
                .collect();
            off += n_out * (n_in + 1);
        }
        h
    }

    pub fn forward_graph<'g>(&self, g: &'g Graph, params: &[Var<'g>], input: &[Var<'g>]) -> Vec<Var<'g>> {
        debug_assert_eq!(params.len(), self.n_params());
        let mut h = input.to_vec();
        let mut off = 0;
        for (w, act) in self.widths.windows(2).zip(&self.acts) {
            let (n_in, n_out) = (w[0], w[1]);
            let bias_off = off + n_in * n_out;
            h = (0..n_out)
                .map(|o| {
                    let row = &params[off + o * n_in..off + (o + 1) * n_in];
                    act.apply_var(g.dot(row, &h) + params[bias_off + o])
                })
                .collect();
            off += n_out * (n_in + 1);
        }
        h
    }
}
