//! Training schedules.
//!
//! Each objective is compiled once into a program that returns the loss
//! and its gradient with respect to both parameter vectors; the loop binds
//! a fresh minibatch and fresh noise every step.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use cygen_core::autodiff::{Graph, Level, Program, Var, Workspace};
use cygen_core::losses::LossGraph;
use cygen_core::models::{FlowConditional, GaussianConditional};
use cygen_core::samplers::chain_rng;

use crate::config::{Method, RunConfig};
use crate::data::LabeledPoints;
use crate::optim::Adam;
use crate::BenchError;

/// Losses above this magnitude count as divergence.
pub const LOSS_LIMIT: f64 = 1e12;

/// Points in the fixed batch on which the compatibility loss is monitored.
pub const MONITOR_POINTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Main,
}

/// One logged step. `compat` and `nll` are minibatch values of the terms
/// the phase optimizes (absent when not computed); `compat_monitor` is
/// the compatibility loss on a fixed batch with fixed noise, comparable
/// across the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub phase: Phase,
    pub total: f64,
    pub compat: Option<f64>,
    pub nll: Option<f64>,
    pub compat_monitor: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub p: GaussianConditional,
    pub q: FlowConditional,
    pub log: Vec<LogRecord>,
    /// Reason training stopped early, if it did.
    pub diverged: Option<String>,
    /// Number of pretraining steps run (the main phase starts after them).
    pub pretrain_steps: usize,
    pub steps_done: usize,
    pub wall_s: f64,
}

impl TrainOutcome {
    pub fn final_total(&self) -> Option<f64> {
        self.log.last().map(|r| r.total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Objective {
    Elbo { beta: f64 },
    Dae,
    Nll,
    Compat,
}

/// A compiled objective with its data and noise inputs.
struct LossProgram<'g> {
    lg: LossGraph<'g>,
    x: Vec<Var<'g>>,
    e: Vec<Var<'g>>,
    eta: Vec<Var<'g>>,
    prog: Program,
    ws: Workspace,
    batch: usize,
    mc: usize,
    with_grad: bool,
}

impl<'g> LossProgram<'g> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        g: &'g Graph,
        p: &GaussianConditional,
        q: &FlowConditional,
        obj: Objective,
        batch: usize,
        mc: usize,
        with_grad: bool,
    ) -> Result<Self, BenchError> {
        let lg = LossGraph::new(g, p, q);
        let x = g.inputs("x", p.d_x(), Level::BATCH);
        let e_level = match obj {
            Objective::Compat => Level::BATCH,
            _ => Level::MC,
        };
        let e = g.inputs("e", q.d_z(), e_level);
        let eta = g.inputs("eta", p.d_x(), Level::BATCH);
        let loss = match obj {
            Objective::Elbo { beta } => lg.elbo(p, q, &x, &e, beta),
            Objective::Dae => lg.dae(p, q, &x, &e),
            Objective::Nll => lg.nll(p, q, &x, &e),
            Objective::Compat => lg.compat_simplified(p, q, &x, &e, &eta)?,
        };
        let mut outs = vec![loss];
        if with_grad {
            let mut wrt = lg.theta.clone();
            wrt.extend(lg.phi.iter().copied());
            outs.extend(g.gradient_or_zero(loss, &wrt).nodes);
        }
        let mut prog = Program::compile(g, &outs)?;
        if obj == Objective::Compat {
            prog = prog.with_chunk_lanes(4096);
        }
        let eta = if obj == Objective::Compat { eta } else { Vec::new() };
        Ok(Self {
            lg,
            x,
            e,
            eta,
            prog,
            ws: Workspace::default(),
            batch,
            mc: if e_level == Level::MC { mc } else { 1 },
            with_grad,
        })
    }

    /// Loss and (if compiled) gradient `[theta.., phi..]`.
    fn eval(
        &mut self,
        p: &GaussianConditional,
        q: &FlowConditional,
        x: &[Vec<f64>],
        e: &[Vec<f64>],
        eta: &[Vec<f64>],
    ) -> Result<(f64, Vec<f64>), BenchError> {
        let mut b = self.prog.bindings(self.batch, self.mc);
        self.lg.bind(&mut b, p, q);
        b.set_all(&self.x, x);
        b.set_all(&self.e, e);
        if !self.eta.is_empty() {
            b.set_all(&self.eta, eta);
        }
        let out = self.prog.eval_with(&mut self.ws, &b)?;
        let loss = out[0][0];
        let grad = if self.with_grad {
            out[1..].iter().map(|v| v[0]).collect()
        } else {
            Vec::new()
        };
        Ok((loss, grad))
    }

    fn noise_lanes(&self) -> usize {
        self.batch * self.mc
    }
}

fn normal_columns(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<Vec<f64>> {
    (0..d).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

fn rademacher_columns(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|_| (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
        .collect()
}

fn point_columns(points: &[[f64; 2]], idx: &[usize]) -> Vec<Vec<f64>> {
    (0..2).map(|k| idx.iter().map(|&i| points[i][k]).collect()).collect()
}

/// Epoch-wise shuffled minibatches over a fixed training set.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        let mut b = Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        };
        b.reshuffle_if_needed(n);
        b
    }

    fn reshuffle_if_needed(&mut self, size: usize) {
        if self.pos + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
    }

    fn next(&mut self, size: usize) -> &[usize] {
        self.reshuffle_if_needed(size);
        let s = &self.order[self.pos..self.pos + size];
        self.pos += size;
        s
    }
}

/// RNG streams of a run; each role draws from its own stream so changing
/// one part of the schedule leaves the others' noise unchanged.
mod stream {
    pub const BATCHES: usize = 1;
    pub const MC_NOISE: usize = 2;
    pub const COMPAT_NOISE: usize = 3;
    pub const PROBES: usize = 4;
    pub const MONITOR: usize = 5;
}

fn flat_params(p: &GaussianConditional, q: &FlowConditional) -> Vec<f64> {
    let mut v = p.params.clone();
    v.extend_from_slice(&q.params);
    v
}

fn unflatten(v: &[f64], p: &mut GaussianConditional, q: &mut FlowConditional) {
    let n = p.params.len();
    p.params.copy_from_slice(&v[..n]);
    q.params.copy_from_slice(&v[n..]);
}

/// Compatibility loss on a fixed batch with fixed seeds and probes.
struct Monitor<'g> {
    prog: LossProgram<'g>,
    x: Vec<Vec<f64>>,
    e: Vec<Vec<f64>>,
    eta: Vec<Vec<f64>>,
}

impl<'g> Monitor<'g> {
    fn new(g: &'g Graph, p: &GaussianConditional, q: &FlowConditional, data: &LabeledPoints, seed: u64) -> Result<Self, BenchError> {
        let n = MONITOR_POINTS.min(data.len());
        let prog = LossProgram::new(g, p, q, Objective::Compat, n, 1, false)?;
        let mut rng = chain_rng(seed, stream::MONITOR);
        let idx: Vec<usize> = (0..n).collect();
        Ok(Self {
            x: point_columns(&data.points, &idx),
            e: normal_columns(&mut rng, q.d_z(), n),
            eta: rademacher_columns(&mut rng, p.d_x(), n),
            prog,
        })
    }

    fn value(&mut self, p: &GaussianConditional, q: &FlowConditional) -> Result<f64, BenchError> {
        Ok(self.prog.eval(p, q, &self.x, &self.e, &self.eta)?.0)
    }
}

/// Runs the method's schedule on `data` from a fresh initialization.
pub fn train(cfg: &RunConfig, seed: u64, data: &LabeledPoints) -> Result<TrainOutcome, BenchError> {
    cfg.validate()?;
    let mut init_rng = chain_rng(seed, 0);
    let (p, q) = cfg.model.build(2, &mut init_rng)?;
    train_from(cfg, seed, data, p, q)
}

/// Runs the method's schedule starting from the given models.
pub fn train_from(
    cfg: &RunConfig,
    seed: u64,
    data: &LabeledPoints,
    mut p: GaussianConditional,
    mut q: FlowConditional,
) -> Result<TrainOutcome, BenchError> {
    cfg.validate()?;
    if data.len() < cfg.optim.batch_size {
        return Err(BenchError::Usage(format!(
            "batch size {} exceeds the {} training points",
            cfg.optim.batch_size,
            data.len()
        )));
    }
    let start = Instant::now();
    let o = &cfg.optim;
    let l = &cfg.loss;
    let n_theta = p.n_params();
    let n_all = n_theta + q.n_params();
    let batch = o.batch_size;
    let compat_batch = if l.compat_batch == 0 { batch } else { l.compat_batch };

    let g_mon = Graph::new();
    let mut monitor = Monitor::new(&g_mon, &p, &q, data, seed)?;

    let mut batches = Batcher::new(data.len(), chain_rng(seed, stream::BATCHES));
    let mut mc_rng = chain_rng(seed, stream::MC_NOISE);
    let mut compat_rng = chain_rng(seed, stream::COMPAT_NOISE);
    let mut probe_rng = chain_rng(seed, stream::PROBES);

    let mut log = Vec::new();
    let mut diverged = None;
    let mut step = 0usize;

    let pretrain_steps = if cfg.pretrains() { o.pretrain_steps } else { 0 };
    let elbo_phase = matches!(cfg.method, Method::Vae);
    let phases: Vec<(Phase, usize)> = [(Phase::Pretrain, pretrain_steps), (Phase::Main, o.steps)]
        .into_iter()
        .filter(|&(_, n)| n > 0)
        .collect();

    'phases: for (phase, n_steps) in phases {
        // Objectives of this phase: (program, weight).
        let g = Graph::new();
        let g_c = Graph::new();
        let mut main: Option<(LossProgram<'_>, f64)> = None;
        let mut compat: Option<(LossProgram<'_>, f64)> = None;
        let (lr, dec_factor) = match phase {
            Phase::Pretrain => (o.pretrain_lr, 1.0),
            Phase::Main => (o.lr, if cfg.method == Method::CygenPt { o.decoder_lr_factor } else { 1.0 }),
        };
        if phase == Phase::Pretrain || elbo_phase {
            main = Some((LossProgram::new(&g, &p, &q, Objective::Elbo { beta: l.beta }, batch, 1, true)?, 1.0));
        } else if cfg.method == Method::Dae {
            main = Some((LossProgram::new(&g, &p, &q, Objective::Dae, batch, l.k_mc, true)?, 1.0));
        } else {
            if l.w_nll > 0.0 {
                main = Some((LossProgram::new(&g, &p, &q, Objective::Nll, batch, l.k_mc, true)?, l.w_nll));
            }
            if l.w_compat > 0.0 {
                compat = Some((
                    LossProgram::new(&g_c, &p, &q, Objective::Compat, compat_batch, 1, true)?,
                    l.w_compat,
                ));
            }
        }
        let mut scale = vec![1.0; n_all];
        scale[..n_theta].iter_mut().for_each(|s| *s = dec_factor);
        let mut adam = Adam::new(n_all, lr, o.weight_decay);
        let mut params = flat_params(&p, &q);

        for local in 0..n_steps {
            let idx = batches.next(batch).to_vec();
            let x = point_columns(&data.points, &idx);
            let mut grad = vec![0.0; n_all];
            let mut total = 0.0;
            let mut main_val = None;
            let mut compat_val = None;
            if let Some((prog, w)) = main.as_mut() {
                let e = normal_columns(&mut mc_rng, q.d_z(), prog.noise_lanes());
                let (v, gr) = prog.eval(&p, &q, &x, &e, &[])?;
                total += *w * v;
                grad.iter_mut().zip(&gr).for_each(|(a, b)| *a += *w * b);
                main_val = Some(v);
            }
            if let Some((prog, w)) = compat.as_mut() {
                let xc: Vec<Vec<f64>> = x.iter().map(|c| c[..compat_batch].to_vec()).collect();
                let e = normal_columns(&mut compat_rng, q.d_z(), compat_batch);
                let eta = rademacher_columns(&mut probe_rng, p.d_x(), compat_batch);
                let (v, gr) = prog.eval(&p, &q, &xc, &e, &eta)?;
                total += *w * v;
                grad.iter_mut().zip(&gr).for_each(|(a, b)| *a += *w * b);
                compat_val = Some(v);
            }

            let bad = |v: f64| !v.is_finite() || v.abs() > LOSS_LIMIT;
            if bad(total) || grad.iter().any(|v| !v.is_finite()) {
                diverged = Some(format!("loss {total:e} at step {step}"));
                break 'phases;
            }
            let before = params.clone();
            adam.step(&mut params, &grad, &scale);
            if params.iter().any(|v| !v.is_finite()) {
                unflatten(&before, &mut p, &mut q);
                diverged = Some(format!("parameters became non-finite at step {step}"));
                break 'phases;
            }
            unflatten(&params, &mut p, &mut q);
            step += 1;

            if step % cfg.log_every == 0 || local + 1 == n_steps {
                let mon = monitor.value(&p, &q)?;
                let (nll, compat_rec) = match (phase, cfg.method) {
                    (Phase::Main, Method::Cygen | Method::CygenPt) => (main_val, compat_val),
                    _ => (None, None),
                };
                log.push(LogRecord {
                    step,
                    phase,
                    total,
                    compat: compat_rec,
                    nll,
                    compat_monitor: mon,
                    elapsed_s: start.elapsed().as_secs_f64(),
                });
                if bad(mon) {
                    diverged = Some(format!("compatibility loss {mon:e} at step {step}"));
                    break 'phases;
                }
            }
        }
    }

    Ok(TrainOutcome {
        p,
        q,
        log,
        diverged,
        pretrain_steps,
        steps_done: step,
        wall_s: start.elapsed().as_secs_f64(),
    })
}
