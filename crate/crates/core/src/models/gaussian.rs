use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Mlp, ModelError, ParamBlock};
use crate::autodiff::{Graph, Var};

/// Additive Gaussian likelihood `p(x|z) = N(x | f(z), sigma2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianConditional {
    pub mean_net: Mlp,
    pub sigma2: f64,
    pub params: Vec<f64>,
}

impl GaussianConditional {
    pub fn new(mean_net: Mlp, sigma2: f64, params: Vec<f64>) -> Result<Self, ModelError> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(ModelError::Config(format!("variance must be positive, got {sigma2}")));
        }
        if params.len() != mean_net.n_params() {
            return Err(ModelError::ParamCount {
                expected: mean_net.n_params(),
                got: params.len(),
            });
        }
        Ok(Self {
            mean_net,
            sigma2,
            params,
        })
    }

    pub fn init<R: Rng + ?Sized>(mean_net: Mlp, sigma2: f64, rng: &mut R) -> Result<Self, ModelError> {
        let params = mean_net.init(rng);
        Self::new(mean_net, sigma2, params)
    }

    pub fn d_x(&self) -> usize {
        self.mean_net.n_out()
    }

    pub fn d_z(&self) -> usize {
        self.mean_net.n_in()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn blocks(&self) -> Vec<ParamBlock> {
        self.mean_net.blocks("decoder")
    }

    pub fn mean(&self, z: &[f64]) -> Vec<f64> {
        self.mean_net.forward(&self.params, z)
    }

    pub fn log_density(&self, x: &[f64], z: &[f64]) -> f64 {
        let f = self.mean(z);
        let sq: f64 = x.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum();
        self.log_norm() - 0.5 * sq / self.sigma2
    }

    /// `grad_x log p(x|z) = (f(z) - x) / sigma2`.
    pub fn grad_x_log_density(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        self.mean(z)
            .iter()
            .zip(x)
            .map(|(f, x)| (f - x) / self.sigma2)
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, z: &[f64], rng: &mut R) -> Vec<f64> {
        let sd = self.sigma2.sqrt();
        self.mean(z)
            .into_iter()
            .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn log_norm(&self) -> f64 {
        -0.5 * self.d_x() as f64 * (2.0 * PI * self.sigma2).ln()
    }

    pub fn mean_graph<'g>(&self, g: &'g Graph, theta: &[Var<'g>], z: &[Var<'g>]) -> Vec<Var<'g>> {
        self.mean_net.forward_graph(g, theta, z)
    }

    pub fn log_density_graph<'g>(&self, g: &'g Graph, theta: &[Var<'g>], x: &[Var<'g>], z: &[Var<'g>]) -> Var<'g> {
        let f = self.mean_graph(g, theta, z);
        self.log_density_from_mean(g, x, &f)
    }

    pub fn log_density_from_mean<'g>(&self, g: &'g Graph, x: &[Var<'g>], f: &[Var<'g>]) -> Var<'g> {
        let sq: Vec<Var<'g>> = x.iter().zip(f).map(|(&a, &b)| (a - b).square()).collect();
        g.sum(&sq) * (-0.5 / self.sigma2) + self.log_norm()
    }

    pub fn grad_x_graph<'g>(&self, x: &[Var<'g>], f: &[Var<'g>]) -> Vec<Var<'g>> {
        x.iter().zip(f).map(|(&a, &b)| (b - a) * (1.0 / self.sigma2)).collect()
    }
}
