//! Sampling from a pair of conditionals.
//!
//! With no prior model, data are drawn by Langevin dynamics on the
//! marginal implied by the pair: for a compatible pair
//! `log p(x) = log p(x|z) - log q(z|x) + log pi(z)` at every `z`, and the
//! last term drops out of the x-gradient at fixed `z`. The latent marginal
//! is handled symmetrically. The Gibbs chain and ancestral sampling are the
//! baselines.
//!
//! Every chain owns a ChaCha stream derived from `(seed, chain index)`, so
//! results do not depend on how many chains run together.

use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Level, Program, Var, Workspace};
use crate::finite::{FiniteCond, FiniteError, JointMatrix};
use crate::losses::LossGraph;
use crate::models::GaussianConditional;
use crate::models::FlowConditional;

/// Chains whose state norm exceeds this are considered diverged.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("chain {chain} diverged at step {step} (state norm {norm:e})")]
    Diverged { chain: usize, step: usize, norm: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Finite(#[from] FiniteError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgldConfig {
    pub eps: f64,
    pub n_steps: usize,
    /// Multiplier on the `sqrt(2 eps)` noise; 1 is exact SGLD.
    #[serde(default = "one")]
    pub noise_scale: f64,
    /// Record every this many steps in the trajectory (0: only the final
    /// state).
    #[serde(default)]
    pub record_every: usize,
}

fn one() -> f64 {
    1.0
}

impl Default for SgldConfig {
    fn default() -> Self {
        Self {
            eps: 3e-4,
            n_steps: 100,
            noise_scale: 1.0,
            record_every: 0,
        }
    }
}

impl SgldConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(SamplerError::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.n_steps == 0 {
            return Err(SamplerError::Config("n_steps must be at least 1".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(SamplerError::Config(format!("noise_scale must be nonnegative, got {}", self.noise_scale)));
        }
        Ok(())
    }
}

/// One chain: current data point, latent, step count and private RNG.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub step: usize,
    rng: ChaCha8Rng,
}

impl ChainState {
    pub fn new(x: Vec<f64>, z: Vec<f64>, seed: u64, index: usize) -> Self {
        Self {
            x,
            z,
            step: 0,
            rng: chain_rng(seed, index),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Independent stream `index` of the generator seeded with `seed`.
pub fn chain_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn std_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `n` chains started from `z0 ~ N(0, I)`, `x0 ~ p(.|z0)`.
pub fn init_from_prior(p: &GaussianConditional, n: usize, seed: u64) -> Vec<ChainState> {
    (0..n)
        .map(|i| {
            let mut rng = chain_rng(seed, i);
            let z = std_normal_vec(&mut rng, p.d_z());
            let x = p.sample(&z, &mut rng);
            ChainState { x, z, step: 0, rng }
        })
        .collect()
}

/// `n` chains started at the given data points with `z0 ~ q(.|x0)`.
pub fn init_from_data(q: &FlowConditional, xs: &[Vec<f64>], seed: u64) -> Vec<ChainState> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = chain_rng(seed, i);
            let (_, z) = q.sample(x, &mut rng);
            ChainState {
                x: x.clone(),
                z,
                step: 0,
                rng,
            }
        })
        .collect()
}

/// Recorded chain states.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub chain: usize,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl Trajectory {
    fn record(&mut self, chains: &[ChainState]) {
        self.rows.extend(chains.iter().enumerate().map(|(i, c)| TrajectoryRow {
            step: c.step,
            chain: i,
            x: c.x.clone(),
            z: c.z.clone(),
        }));
    }

    /// CSV with columns `step, chain, x0.., z0..`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SamplerError> {
        let mut out = csv::Writer::from_writer(w);
        if let Some(first) = self.rows.first() {
            let mut header = vec!["step".to_string(), "chain".to_string()];
            header.extend((0..first.x.len()).map(|i| format!("x{i}")));
            header.extend((0..first.z.len()).map(|i| format!("z{i}")));
            out.write_record(&header)?;
        }
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), r.chain.to_string()];
            rec.extend(r.x.iter().chain(&r.z).map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SamplerError> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn should_record(cfg: &SgldConfig, step: usize) -> bool {
    step == cfg.n_steps || (cfg.record_every > 0 && step % cfg.record_every == 0)
}

fn check_dims(chains: &[ChainState], d_x: usize, d_z: usize) -> Result<(), SamplerError> {
    for (i, c) in chains.iter().enumerate() {
        if c.x.len() != d_x || c.z.len() != d_z {
            return Err(SamplerError::Dimension(format!(
                "chain {i} has state dims ({}, {}), expected ({d_x}, {d_z})",
                c.x.len(),
                c.z.len()
            )));
        }
    }
    Ok(())
}

fn guard(state: &[f64], chain: usize, step: usize) -> Result<(), SamplerError> {
    let norm = state.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm.is_finite() && norm <= DIVERGENCE_NORM {
        Ok(())
    } else {
        Err(SamplerError::Diverged { chain, step, norm })
    }
}

/// Column-major copy of one field of every chain.
fn columns(chains: &[ChainState], d: usize, field: impl Fn(&ChainState) -> &[f64]) -> Vec<Vec<f64>> {
    (0..d).map(|k| chains.iter().map(|c| field(c)[k]).collect()).collect()
}

/// Plain SGLD on an explicit log density with gradient `grad`, returning
/// the `n_steps + 1` visited states (the start included).
pub fn sgld<R: Rng + ?Sized>(
    grad: impl Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    cfg: &SgldConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, SamplerError> {
    cfg.validate()?;
    let noise = cfg.noise_scale * (2.0 * cfg.eps).sqrt();
    let mut out = Vec::with_capacity(cfg.n_steps + 1);
    let mut x = x0.to_vec();
    out.push(x.clone());
    for step in 1..=cfg.n_steps {
        let g = grad(&x);
        for (xi, gi) in x.iter_mut().zip(g) {
            *xi += cfg.eps * gi + noise * rng.sample::<f64, _>(StandardNormal);
        }
        guard(&x, 0, step)?;
        out.push(x.clone());
    }
    Ok(out)
}

/// `log p(x|z) - log q(z|x)` at one `z ~ q(.|x)`. For a compatible pair this
/// is `log p(x) - log pi(z)`, so its x-gradient at fixed `z` is the score of
/// the data marginal.
pub fn unnorm_logdensity_x<R: Rng + ?Sized>(p: &GaussianConditional, q: &FlowConditional, x: &[f64], rng: &mut R) -> f64 {
    let e = std_normal_vec(rng, q.d_z());
    let (z, _) = q.forward(&e, x);
    p.log_density(x, &z) - q.log_density_seed(&e, x)
}

/// X-space SGLD: `x += eps grad_x [log p(x|z) - log q(z|x)] + sqrt(2 eps) eta`
/// with a fresh `z ~ q(.|x)` every step. Chains are updated in place.
pub fn sgld_x(
    p: &GaussianConditional,
    q: &FlowConditional,
    chains: &mut [ChainState],
    cfg: &SgldConfig,
) -> Result<Trajectory, SamplerError> {
    cfg.validate()?;
    let (d_x, d_z) = (p.d_x(), p.d_z());
    check_dims(chains, d_x, d_z)?;
    let mut traj = Trajectory::default();
    if chains.is_empty() {
        return Ok(traj);
    }
    let g = Graph::new();
    let lg = LossGraph::new(&g, p, q);
    let x = g.inputs("x", d_x, Level::BATCH);
    let e = g.inputs("e", d_z, Level::BATCH);
    let t = lg.score_terms(p, q, &x, &e);
    let mut outs: Vec<Var<'_>> = t.pass.z.clone();
    outs.extend(&t.score_gap);
    let prog = Program::compile(&g, &outs)?;
    let mut ws = Workspace::default();
    let mut b = prog.bindings(chains.len(), 1);
    lg.bind(&mut b, p, q);

    if cfg.record_every > 0 {
        traj.record(chains);
    }
    let noise = cfg.noise_scale * (2.0 * cfg.eps).sqrt();
    let mut seeds = vec![vec![0.0; chains.len()]; d_z];
    for step in 1..=cfg.n_steps {
        for (i, c) in chains.iter_mut().enumerate() {
            for col in seeds.iter_mut() {
                col[i] = c.rng.sample(StandardNormal);
            }
        }
        b.set_all(&x, &columns(chains, d_x, |c| &c.x));
        b.set_all(&e, &seeds);
        let r = prog.eval_with(&mut ws, &b)?;
        for (i, c) in chains.iter_mut().enumerate() {
            for k in 0..d_z {
                c.z[k] = r[k][i];
            }
            for k in 0..d_x {
                let eta: f64 = c.rng.sample(StandardNormal);
                c.x[k] += cfg.eps * r[d_z + k][i] + noise * eta;
            }
            c.step += 1;
            guard(&c.x, i, c.step)?;
        }
        if should_record(cfg, step) {
            traj.record(chains);
        }
    }
    Ok(traj)
}

/// Z-space SGLD: `z += eps grad_z [log q(z|x) - log p(x|z)] + sqrt(2 eps) eta`
/// with a fresh `x ~ p(.|z)` every step; `log q` is evaluated through the
/// exact flow inverse.
pub fn sgld_z(
    p: &GaussianConditional,
    q: &FlowConditional,
    chains: &mut [ChainState],
    cfg: &SgldConfig,
) -> Result<Trajectory, SamplerError> {
    cfg.validate()?;
    let (d_x, d_z) = (p.d_x(), p.d_z());
    check_dims(chains, d_x, d_z)?;
    let mut traj = Trajectory::default();
    if chains.is_empty() {
        return Ok(traj);
    }
    let g = Graph::new();
    let lg = LossGraph::new(&g, p, q);
    let x = g.inputs("x", d_x, Level::BATCH);
    let e = g.inputs("e", d_z, Level::BATCH);
    let t = lg.score_terms(p, q, &x, &e);
    let lp = p.log_density_graph(&g, &lg.theta, &x, &t.pass.z);
    let grad_z_logp = g.gradient_or_zero(lp, &t.pass.z).nodes;
    let drift: Vec<Var<'_>> = t.grad_z_logq.iter().zip(&grad_z_logp).map(|(&a, &b)| a - b).collect();
    let prog = Program::compile(&g, &drift)?;
    let mut ws = Workspace::default();
    let mut b = prog.bindings(chains.len(), 1);
    lg.bind(&mut b, p, q);

    if cfg.record_every > 0 {
        traj.record(chains);
    }
    let noise = cfg.noise_scale * (2.0 * cfg.eps).sqrt();
    let mut seeds = vec![vec![0.0; chains.len()]; d_z];
    for step in 1..=cfg.n_steps {
        for (i, c) in chains.iter_mut().enumerate() {
            c.x = p.sample(&c.z, &mut c.rng);
            let s = q.inverse(&c.z, &c.x);
            for (col, v) in seeds.iter_mut().zip(s) {
                col[i] = v;
            }
        }
        b.set_all(&x, &columns(chains, d_x, |c| &c.x));
        b.set_all(&e, &seeds);
        let r = prog.eval_with(&mut ws, &b)?;
        for (i, c) in chains.iter_mut().enumerate() {
            for k in 0..d_z {
                let eta: f64 = c.rng.sample(StandardNormal);
                c.z[k] += cfg.eps * r[k][i] + noise * eta;
            }
            c.step += 1;
            guard(&c.z, i, c.step)?;
        }
        if should_record(cfg, step) {
            traj.record(chains);
        }
    }
    Ok(traj)
}

/// Gibbs chain `z ~ q(.|x)`, `x ~ p(.|z)`, updated in place; records every
/// `record_every` steps (0: only the final state).
pub fn gibbs_chain(
    p: &GaussianConditional,
    q: &FlowConditional,
    chains: &mut [ChainState],
    n_steps: usize,
    record_every: usize,
) -> Result<Trajectory, SamplerError> {
    check_dims(chains, p.d_x(), p.d_z())?;
    let mut traj = Trajectory::default();
    if record_every > 0 {
        traj.record(chains);
    }
    for step in 1..=n_steps {
        for (i, c) in chains.iter_mut().enumerate() {
            c.z = q.sample(&c.x, &mut c.rng).1;
            c.x = p.sample(&c.z, &mut c.rng);
            c.step += 1;
            guard(&c.x, i, c.step)?;
        }
        if step == n_steps || (record_every > 0 && step % record_every == 0) {
            traj.record(chains);
        }
    }
    Ok(traj)
}

/// Gibbs chain on finite spaces from x-state `x0`: each step draws
/// `z ~ q(.|x)` then `x ~ p(.|z)` and emits `(x, z)`.
pub fn gibbs_chain_finite(
    p: &FiniteCond,
    q: &FiniteCond,
    x0: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>, SamplerError> {
    let (nx, nz) = (p.n_out(), p.n_given());
    if q.n_out() != nz || q.n_given() != nx || x0 >= nx {
        return Err(SamplerError::Dimension(format!(
            "p is {nx}x{nz}, q is {}x{}, x0 = {x0}",
            q.n_out(),
            q.n_given()
        )));
    }
    let columns = |c: &FiniteCond| -> Vec<Option<WeightedIndex<f64>>> {
        (0..c.n_given())
            .map(|j| WeightedIndex::new((0..c.n_out()).map(|i| c.get(i, j))).ok())
            .collect()
    };
    let (pd, qd) = (columns(p), columns(q));
    let mut rng = chain_rng(seed, 0);
    let mut x = x0;
    let mut out = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let z = qd[x].as_ref().ok_or(FiniteError::ChainStuck(x))?.sample(&mut rng);
        x = pd[z].as_ref().ok_or(FiniteError::ChainStuck(z))?.sample(&mut rng);
        out.push((x, z));
    }
    Ok(out)
}

/// Empirical joint of `(x, z)` pairs.
pub fn occupancy(pairs: &[(usize, usize)], n_x: usize, n_z: usize) -> Result<JointMatrix, SamplerError> {
    let mut t = vec![0.0; n_x * n_z];
    for &(x, z) in pairs {
        t[x * n_z + z] += 1.0;
    }
    Ok(JointMatrix::from_weights(n_x, n_z, t)?)
}

/// `n` draws of `z ~ N(0, I)`, `x ~ p(.|z)`, returned as `(x, z)` pairs.
pub fn ancestral(p: &GaussianConditional, n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    init_from_prior(p, n, seed).into_iter().map(|c| (c.x, c.z)).collect()
}
