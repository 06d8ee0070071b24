//! Training objectives as graph builders.
//!
//! Every builder takes batch-level data nodes `x` (one lane per data point)
//! and seed nodes `e`, and returns a shared scalar: the batch mean of the
//! per-point loss. Seeds at the batch level give one latent sample per
//! point; seeds at the replicate level give `k_mc` samples per point.
//!
//! Gradients of `log q(z|x)` with respect to its formal arguments are
//! routed through the flow seed: with `z = T(e|x)`,
//! `grad_Z = (dz/de)^{-T} grad_e h` and
//! `grad_X = grad_x h - (dz/dx)^T grad_Z`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{cross_norm_exact, AutodiffError, Bindings, Graph, Level, Var};
use crate::models::{FlowConditional, FlowParams, FlowPass, GaussianConditional};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("invalid loss weights: {0}")]
    Weights(String),
    #[error("{what} has dimension {got}, expected {expected}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Coefficients of the composite objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_compat: f64,
    pub w_nll: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_compat: 1e-5,
            w_nll: 1.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [("w_compat", self.w_compat), ("w_nll", self.w_nll), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LossError::Weights(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Flow quantities at `(x, e)` needed by the compatibility losses.
pub struct ScoreTerms<'g> {
    pub fp: FlowParams<Var<'g>>,
    pub pass: FlowPass<'g>,
    /// `grad_Z log q(z|x)`.
    pub grad_z_logq: Vec<Var<'g>>,
    /// `grad_X log q(z|x)`.
    pub grad_x_logq: Vec<Var<'g>>,
    /// `grad_X log p(x|z) - grad_X log q(z|x)`.
    pub score_gap: Vec<Var<'g>>,
}

/// Parameter nodes of both models plus the size-dependent constants that
/// turn lane sums into means.
pub struct LossGraph<'g> {
    pub g: &'g Graph,
    pub theta: Vec<Var<'g>>,
    pub phi: Vec<Var<'g>>,
    inv_batch: Var<'g>,
    inv_mc: Var<'g>,
    log_mc: Var<'g>,
}

impl<'g> LossGraph<'g> {
    pub fn new(g: &'g Graph, p: &GaussianConditional, q: &FlowConditional) -> Self {
        Self {
            g,
            theta: g.inputs("theta", p.n_params(), Level::SHARED),
            phi: g.inputs("phi", q.n_params(), Level::SHARED),
            inv_batch: g.input("inv_batch", Level::SHARED),
            inv_mc: g.input("inv_mc", Level::SHARED),
            log_mc: g.input("log_mc", Level::SHARED),
        }
    }

    /// Binds the parameters and the size constants (taken from `b`).
    pub fn bind(&self, b: &mut Bindings, p: &GaussianConditional, q: &FlowConditional) {
        b.set_scalars(&self.theta, &p.params);
        b.set_scalars(&self.phi, &q.params);
        self.bind_sizes(b);
    }

    pub fn bind_sizes(&self, b: &mut Bindings) {
        let (n, k) = (b.batch() as f64, b.mc() as f64);
        b.set_scalar(self.inv_batch, 1.0 / n);
        b.set_scalar(self.inv_mc, 1.0 / k);
        b.set_scalar(self.log_mc, k.ln());
    }

    /// Batch mean of a batch-level node.
    pub fn batch_mean(&self, v: Var<'g>) -> Var<'g> {
        self.g.reduce(v, Level::SHARED) * self.inv_batch
    }

    /// Mean over batch and replicates of a replicate-level node.
    pub fn full_mean(&self, v: Var<'g>) -> Var<'g> {
        self.g.reduce(v, Level::SHARED) * self.inv_batch * self.inv_mc
    }

    /// Flow pass and formal-argument gradients of `log q` at `z = T(e|x)`.
    pub fn score_terms(&self, p: &GaussianConditional, q: &FlowConditional, x: &[Var<'g>], e: &[Var<'g>]) -> ScoreTerms<'g> {
        let g = self.g;
        let fp = q.amortized_graph(g, &self.phi, x);
        let pass = fp.forward_graph(g, e);
        let grad_e_h = g.gradient_or_zero(pass.h, e).nodes;
        let grad_z_logq = fp.solve_transpose_graph(g, &pass, &grad_e_h);
        let mut seeds = vec![(pass.h, g.constant(1.0))];
        seeds.extend(pass.z.iter().zip(&grad_z_logq).map(|(&z, &c)| (z, -c)));
        let grad_x_logq: Vec<Var<'g>> = g
            .vjp(&seeds, x)
            .into_iter()
            .map(|c| c.unwrap_or_else(|| g.constant(0.0)))
            .collect();
        let f = p.mean_graph(g, &self.theta, &pass.z);
        let grad_x_logp = p.grad_x_graph(x, &f);
        let score_gap = grad_x_logp.iter().zip(&grad_x_logq).map(|(&a, &b)| a - b).collect();
        ScoreTerms {
            fp,
            pass,
            grad_z_logq,
            grad_x_logq,
            score_gap,
        }
    }

    /// Per-point `||grad_X grad_Z^T log(p/q)||_F^2` at `z = T(e|x)`.
    pub fn compat_exact_lanes(&self, p: &GaussianConditional, q: &FlowConditional, x: &[Var<'g>], e: &[Var<'g>]) -> Var<'g> {
        let g = self.g;
        let t = self.score_terms(p, q, x, e);
        let mut terms = Vec::new();
        for &s in &t.score_gap {
            let ge = g.gradient_or_zero(s, e).nodes;
            let gz = t.fp.solve_transpose_graph(g, &t.pass, &ge);
            terms.extend(gz.iter().map(|v| v.square()));
        }
        g.sum(&terms)
    }

    /// Batch mean of the exact cross-derivative norm.
    pub fn compat_exact(&self, p: &GaussianConditional, q: &FlowConditional, x: &[Var<'g>], e: &[Var<'g>]) -> Var<'g> {
        self.batch_mean(self.compat_exact_lanes(p, q, x, e))
    }

    /// Per-point `||grad_Z (eta . score_gap)||^2` for probe nodes `eta`.
    pub fn compat_hutchinson_lanes(
        &self,
        p: &GaussianConditional,
        q: &FlowConditional,
        x: &[Var<'g>],
        e: &[Var<'g>],
        eta: &[Var<'g>],
    ) -> Result<Var<'g>, LossError> {
        check_dim("probe", x.len(), eta.len())?;
        let g = self.g;
        let t = self.score_terms(p, q, x, e);
        let s = g.dot(eta, &t.score_gap);
        let ge = g.gradient_or_zero(s, e).nodes;
        let gz = t.fp.solve_transpose_graph(g, &t.pass, &ge);
        let sq: Vec<Var<'g>> = gz.iter().map(|v| v.square()).collect();
        Ok(g.sum(&sq))
    }

    pub fn compat_hutchinson(
        &self,
        p: &GaussianConditional,
        q: &FlowConditional,
        x: &[Var<'g>],
        e: &[Var<'g>],
        eta: &[Var<'g>],
    ) -> Result<Var<'g>, LossError> {
        Ok(self.batch_mean(self.compat_hutchinson_lanes(p, q, x, e, eta)?))
    }

    /// Per-point `||grad_e (eta . score_gap)||^2`: the seed-gradient form,
    /// zero exactly when the z-gradient form is.
    pub fn compat_simplified_lanes(
        &self,
        p: &GaussianConditional,
        q: &FlowConditional,
        x: &[Var<'g>],
        e: &[Var<'g>],
        eta: &[Var<'g>],
    ) -> Result<Var<'g>, LossError> {
        check_dim("probe", x.len(), eta.len())?;
        let g = self.g;
        let t = self.score_terms(p, q, x, e);
        let s = g.dot(eta, &t.score_gap);
        let ge = g.gradient_or_zero(s, e).nodes;
        let sq: Vec<Var<'g>> = ge.iter().map(|v| v.square()).collect();
        Ok(g.sum(&sq))
    }

    pub fn compat_simplified(
        &self,
        p: &GaussianConditional,
        q: &FlowConditional,
        x: &[Var<'g>],
        e: &[Var<'g>],
        eta: &[Var<'g>],
    ) -> Result<Var<'g>, LossError> {
        Ok(self.batch_mean(self.compat_simplified_lanes(p, q, x, e, eta)?))
    }

    /// `log p(x|z_k)` at replicate level for `z_k = T(e_k|x)`.
    fn log_lik_samples(&self, p: &GaussianConditional, q: &FlowConditional, x: &[Var<'g>], e: &[Var<'g>]) -> (Var<'g>, FlowPass<'g>) {
        let fp = q.amortized_graph(self.g, &self.phi, x);
        let pass = fp.forward_graph(self.g, e);
        let lp = p.log_density_graph(self.g, &self.theta, x, &pass.z);
        (lp, pass)
    }

    /// Per-point `log mean_k 1/p(x|z_k)`, an estimate of `-log p(x)`.
    pub fn nll_lanes(&self, p: &GaussianConditional, q: &FlowConditional, x: &[Var<'g>], e: &[Var<'g>]) -> Var<'g> {
        let (lp, _) = self.log_lik_samples(p, q, x, e);
        self.g.logsumexp(-lp, Level::BATCH) - self.log_mc
    }

    pub fn nll(&self, p: &GaussianConditional, q: &FlowConditional, x: &[Var<'g>], e: &[Var<'g>]) -> Var<'g> {
        self.batch_mean(self.nll_lanes(p, q, x, e))
    }

    /// Mean reconstruction loss `E_q[-log p(x|z)]`.
    pub fn dae(&self, p: &GaussianConditional, q: &FlowConditional, x: &[Var<'g>], e: &[Var<'g>]) -> Var<'g> {
        let (lp, _) = self.log_lik_samples(p, q, x, e);
        self.full_mean(-lp)
    }

    /// Negative ELBO with KL weight `beta` against a standard normal prior.
    pub fn elbo(&self, p: &GaussianConditional, q: &FlowConditional, x: &[Var<'g>], e: &[Var<'g>], beta: f64) -> Var<'g> {
        let g = self.g;
        let (lp, pass) = self.log_lik_samples(p, q, x, e);
        let zsq: Vec<Var<'g>> = pass.z.iter().map(|v| v.square()).collect();
        let log_prior = g.sum(&zsq) * -0.5 - 0.5 * pass.z.len() as f64 * (2.0 * std::f64::consts::PI).ln();
        self.full_mean(-lp + (pass.h - log_prior) * beta)
    }

    /// `w_compat * compat_simplified(x, e_c, eta) + w_nll * nll(x, e_mc)`.
    #[allow(clippy::too_many_arguments)]
    pub fn cygen_objective(
        &self,
        p: &GaussianConditional,
        q: &FlowConditional,
        x: &[Var<'g>],
        e_compat: &[Var<'g>],
        eta: &[Var<'g>],
        e_mc: &[Var<'g>],
        weights: LossWeights,
    ) -> Result<CygenTerms<'g>, LossError> {
        weights.validate()?;
        let compat = self.compat_simplified(p, q, x, e_compat, eta)?;
        let nll = self.nll(p, q, x, e_mc);
        let total = compat * weights.w_compat + nll * weights.w_nll;
        Ok(CygenTerms { compat, nll, total })
    }
}

pub struct CygenTerms<'g> {
    pub compat: Var<'g>,
    pub nll: Var<'g>,
    pub total: Var<'g>,
}

/// Exact compatibility integrand for conditionals with explicit log
/// densities in the formal arguments `x`, `z`.
pub fn compat_explicit<'g>(g: &'g Graph, log_p: Var<'g>, log_q: Var<'g>, x: &[Var<'g>], z: &[Var<'g>]) -> Var<'g> {
    cross_norm_exact(g, log_p - log_q, x, z)
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<(), LossError> {
    if expected == got {
        Ok(())
    } else {
        Err(LossError::Dimension { what, expected, got })
    }
}
