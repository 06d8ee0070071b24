//! Amortized Householder–Sylvester flow encoder `q(z|x)`.
//!
//! A seed `e ~ N(0, I)` is mapped to `z_0 = mu(x) + e * sigma(x)` and then
//! through `n_flows` layers
//! `z_t = z_{t-1} + Q R tanh(R~ Q^T z_{t-1} + b)` where `Q` is a product of
//! `n_householder` reflections and `R`, `R~` are upper triangular. Every
//! layer parameter is a linear function of the features `cqnn(x)`.
//!
//! The inverse map is never needed: the density is only evaluated at
//! generated points, where `log q(z|x) = log N(e) - log|det dz/de|`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Activation, Mlp, ModelError, ParamBlock};
use crate::autodiff::{self, softplus, Graph, Level, Var};

/// Keeps a reflection defined at `v = 0` (where it is the identity).
const REFLECT_EPS: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub d_x: usize,
    pub d_z: usize,
    /// Feature network `x -> q_nn`; widths `[d_x]` means the features are `x`.
    pub cqnn: Mlp,
    pub n_flows: usize,
    pub n_householder: usize,
}

impl FlowConfig {
    /// Tanh feature network with the given hidden widths.
    pub fn with_hidden(d_x: usize, d_z: usize, hidden: &[usize], n_flows: usize, n_householder: usize) -> Result<Self, ModelError> {
        let mut widths = vec![d_x];
        widths.extend_from_slice(hidden);
        let cqnn = Mlp::uniform(widths, Activation::Tanh, Activation::Tanh)?;
        let cfg = Self {
            d_x,
            d_z,
            cqnn,
            n_flows,
            n_householder,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_x == 0 || self.d_z == 0 {
            return Err(ModelError::Config("dimensions must be positive".into()));
        }
        if self.cqnn.n_in() != self.d_x {
            return Err(ModelError::Config(format!(
                "feature network takes {} inputs, data has {}",
                self.cqnn.n_in(),
                self.d_x
            )));
        }
        if self.n_flows > 0 && (self.n_householder == 0 || self.n_householder > self.d_z) {
            return Err(ModelError::Config(format!(
                "need 1 <= householder count <= d_z = {}, got {}",
                self.d_z, self.n_householder
            )));
        }
        Ok(())
    }

    fn n_tri(&self) -> usize {
        self.d_z * (self.d_z + 1) / 2
    }

    /// Named linear heads in output order: `(name, width)`.
    pub fn head_groups(&self) -> Vec<(String, usize)> {
        let d = self.d_z;
        let mut out = vec![("mu".to_string(), d), ("sigma".to_string(), d)];
        for t in 0..self.n_flows {
            out.push((format!("flow.{t}.v"), self.n_householder * d));
            out.push((format!("flow.{t}.r"), self.n_tri()));
            out.push((format!("flow.{t}.r_tilde"), self.n_tri()));
            out.push((format!("flow.{t}.b"), d));
        }
        out
    }

    pub fn n_heads(&self) -> usize {
        2 * self.d_z + self.n_flows * (self.n_householder * self.d_z + 2 * self.n_tri() + self.d_z)
    }

    pub fn n_params(&self) -> usize {
        self.cqnn.n_params() + self.n_heads() * (self.cqnn.n_out() + 1)
    }

    pub fn blocks(&self) -> Vec<ParamBlock> {
        let c = self.cqnn.n_out();
        let mut out = self.cqnn.blocks("encoder.cqnn");
        for (name, k) in self.head_groups() {
            out.push(ParamBlock::new(format!("encoder.{name}.weight"), vec![k, c]));
            out.push(ParamBlock::new(format!("encoder.{name}.bias"), vec![k]));
        }
        out
    }
}

/// Amortized parameters of one flow layer (after positivity maps).
#[derive(Debug, Clone)]
pub struct LayerParams<T> {
    /// Householder vectors, applied to `Q^T z` in order.
    pub v: Vec<Vec<T>>,
    /// Upper triangular `R` (lower entries zero), diagonal in `(-1, 1)`.
    pub r: Vec<Vec<T>>,
    pub r_tilde: Vec<Vec<T>>,
    pub b: Vec<T>,
}

/// All amortized quantities for one `x`.
#[derive(Debug, Clone)]
pub struct FlowParams<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub layers: Vec<LayerParams<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConditional {
    pub config: FlowConfig,
    pub params: Vec<f64>,
}

impl FlowConditional {
    pub fn new(config: FlowConfig, params: Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        if params.len() != config.n_params() {
            return Err(ModelError::ParamCount {
                expected: config.n_params(),
                got: params.len(),
            });
        }
        Ok(Self { config, params })
    }

    /// Default linear-layer initialization for every block.
    pub fn init<R: Rng + ?Sized>(config: FlowConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = config.cqnn.init(rng);
        let c = config.cqnn.n_out();
        let bound = 1.0 / (c as f64).sqrt();
        for _ in 0..config.n_heads() * (c + 1) {
            params.push(rng.random_range(-bound..bound));
        }
        Self::new(config, params)
    }

    /// All parameters zero except what `set_block` later fills in.
    pub fn zeros(config: FlowConfig) -> Result<Self, ModelError> {
        let n = config.n_params();
        Self::new(config, vec![0.0; n])
    }

    pub fn d_x(&self) -> usize {
        self.config.d_x
    }

    pub fn d_z(&self) -> usize {
        self.config.d_z
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn blocks(&self) -> Vec<ParamBlock> {
        self.config.blocks()
    }

    /// Overwrites the named parameter block.
    pub fn set_block(&mut self, name: &str, values: &[f64]) -> Result<(), ModelError> {
        let mut off = 0;
        for b in self.blocks() {
            if b.name == name {
                if values.len() != b.len() {
                    return Err(ModelError::ParamCount {
                        expected: b.len(),
                        got: values.len(),
                    });
                }
                self.params[off..off + b.len()].copy_from_slice(values);
                return Ok(());
            }
            off += b.len();
        }
        Err(ModelError::Config(format!("no parameter block `{name}`")))
    }

    fn raw_heads(&self, x: &[f64]) -> Vec<f64> {
        let cq = self.config.cqnn.n_params();
        let feat = self.config.cqnn.forward(&self.params[..cq], x);
        let c = feat.len();
        let mut off = cq;
        let mut out = Vec::with_capacity(self.config.n_heads());
        for (_, k) in self.config.head_groups() {
            let w = &self.params[off..off + k * c];
            let b = &self.params[off + k * c..off + k * (c + 1)];
            for j in 0..k {
                out.push(b[j] + w[j * c..(j + 1) * c].iter().zip(&feat).map(|(a, f)| a * f).sum::<f64>());
            }
            off += k * (c + 1);
        }
        out
    }

    fn raw_heads_graph<'g>(&self, g: &'g Graph, phi: &[Var<'g>], x: &[Var<'g>]) -> Vec<Var<'g>> {
        let cq = self.config.cqnn.n_params();
        let feat = self.config.cqnn.forward_graph(g, &phi[..cq], x);
        let c = feat.len();
        let mut off = cq;
        let mut out = Vec::with_capacity(self.config.n_heads());
        for (_, k) in self.config.head_groups() {
            for j in 0..k {
                let w = &phi[off + j * c..off + (j + 1) * c];
                out.push(g.dot(w, &feat) + phi[off + k * c + j]);
            }
            off += k * (c + 1);
        }
        out
    }

    /// Amortized parameters at `x`.
    pub fn amortized(&self, x: &[f64]) -> FlowParams<f64> {
        let raw = self.raw_heads(x);
        unpack(&self.config, &raw, 0.0, softplus, f64::tanh)
    }

    /// Graph version of [`FlowConditional::amortized`] with encoder
    /// parameters `phi`.
    pub fn amortized_graph<'g>(&self, g: &'g Graph, phi: &[Var<'g>], x: &[Var<'g>]) -> FlowParams<Var<'g>> {
        debug_assert_eq!(phi.len(), self.n_params());
        let raw = self.raw_heads_graph(g, phi, x);
        unpack(&self.config, &raw, g.constant(0.0), |v| v.softplus(), |v| v.tanh())
    }

    /// `(z, log|det dz/de|)` for seed `e` at `x`.
    pub fn forward(&self, e: &[f64], x: &[f64]) -> (Vec<f64>, f64) {
        self.amortized(x).forward(e)
    }

    /// `h(e, x) = log q(T(e|x) | x) = log N(e; 0, I) - log|det dz/de|`.
    pub fn log_density_seed(&self, e: &[f64], x: &[f64]) -> f64 {
        let (_, ld) = self.forward(e, x);
        std_normal_log_density(e) - ld
    }

    /// Seed that the flow at `x` maps to `z`.
    pub fn inverse(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        self.amortized(x).inverse(z)
    }

    /// `log q(z|x)` through the exact inverse.
    pub fn log_density(&self, z: &[f64], x: &[f64]) -> f64 {
        self.log_density_seed(&self.inverse(z, x), x)
    }

    /// Draws `(e, z)` with `z ~ q(.|x)`.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let e: Vec<f64> = (0..self.d_z()).map(|_| rng.sample(StandardNormal)).collect();
        let (z, _) = self.forward(&e, x);
        (e, z)
    }

    /// `grad_Z log q(z|x)` at `z = T(e|x)`, solving `(dz/de)^T g = grad_e h`
    /// by LU with partial pivoting on the explicit Jacobian.
    pub fn grad_z_logq(&self, e: &[f64], x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let fp = self.amortized(x);
        let jac = fp.jacobian(e);
        let grad_e_h = self.grad_e_h(e, x);
        let rhs = DVector::from_column_slice(&grad_e_h);
        jac.transpose()
            .lu()
            .solve(&rhs)
            .map(|v| v.iter().copied().collect())
            .ok_or(ModelError::Singular)
    }

    /// `grad_e h(e, x)` by reverse mode.
    pub fn grad_e_h(&self, e: &[f64], x: &[f64]) -> Vec<f64> {
        let g = Graph::new();
        let phi = g.inputs("phi", self.n_params(), Level::SHARED);
        let xs = g.inputs("x", self.d_x(), Level::SHARED);
        let es = g.inputs("e", self.d_z(), Level::SHARED);
        let fp = self.amortized_graph(&g, &phi, &xs);
        let pass = fp.forward_graph(&g, &es);
        let grad = g.gradient_or_zero(pass.h, &es);
        let bind = bind_point(&phi, &self.params, &xs, x, &es, e);
        autodiff::eval_scalar(&g, &bind, &grad.nodes).expect("all inputs bound")
    }

    /// `grad_X log q(z|x)` at `z = T(e|x)`: `grad_x h - (dz/dx)^T grad_Z log q`,
    /// the second term as one vector-Jacobian product.
    pub fn grad_x_logq(&self, e: &[f64], x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let gz = self.grad_z_logq(e, x)?;
        let g = Graph::new();
        let phi = g.inputs("phi", self.n_params(), Level::SHARED);
        let xs = g.inputs("x", self.d_x(), Level::SHARED);
        let es = g.inputs("e", self.d_z(), Level::SHARED);
        let fp = self.amortized_graph(&g, &phi, &xs);
        let pass = fp.forward_graph(&g, &es);
        let mut seeds = vec![(pass.h, g.constant(1.0))];
        seeds.extend(pass.z.iter().zip(&gz).map(|(&z, &c)| (z, g.constant(-c))));
        let out: Vec<Var<'_>> = g
            .vjp(&seeds, &xs)
            .into_iter()
            .map(|c| c.unwrap_or_else(|| g.constant(0.0)))
            .collect();
        let bind = bind_point(&phi, &self.params, &xs, x, &es, e);
        Ok(autodiff::eval_scalar(&g, &bind, &out).expect("all inputs bound"))
    }
}

fn bind_point<'g>(
    phi: &[Var<'g>],
    params: &[f64],
    xs: &[Var<'g>],
    x: &[f64],
    es: &[Var<'g>],
    e: &[f64],
) -> Vec<(Var<'g>, f64)> {
    phi.iter()
        .copied()
        .zip(params.iter().copied())
        .chain(xs.iter().copied().zip(x.iter().copied()))
        .chain(es.iter().copied().zip(e.iter().copied()))
        .collect()
}

pub fn std_normal_log_density(e: &[f64]) -> f64 {
    -0.5 * e.iter().map(|v| v * v).sum::<f64>() - 0.5 * e.len() as f64 * (2.0 * PI).ln()
}

fn unpack<T: Copy>(
    cfg: &FlowConfig,
    raw: &[T],
    zero: T,
    pos: impl Fn(T) -> T,
    diag: impl Fn(T) -> T,
) -> FlowParams<T> {
    let d = cfg.d_z;
    let mut it = raw.iter().copied();
    let mut take = |n: usize| -> Vec<T> { (0..n).map(|_| it.next().expect("head layout")).collect() };
    let mu = take(d);
    let sigma: Vec<T> = take(d).into_iter().map(&pos).collect();
    let mut layers = Vec::with_capacity(cfg.n_flows);
    for _ in 0..cfg.n_flows {
        let vflat = take(cfg.n_householder * d);
        let v = vflat.chunks(d).map(<[T]>::to_vec).collect();
        let r = upper(d, &take(cfg.n_tri()), zero, &diag);
        let r_tilde = upper(d, &take(cfg.n_tri()), zero, &diag);
        let b = take(d);
        layers.push(LayerParams { v, r, r_tilde, b });
    }
    FlowParams { mu, sigma, layers }
}

/// Fills an upper triangular matrix row by row from packed entries.
fn upper<T: Copy>(d: usize, packed: &[T], zero: T, diag: impl Fn(T) -> T) -> Vec<Vec<T>> {
    let mut m = vec![vec![zero; d]; d];
    let mut k = 0;
    for (i, row) in m.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate().skip(i) {
            *cell = if i == j { diag(packed[k]) } else { packed[k] };
            k += 1;
        }
    }
    m
}

fn reflect(v: &[f64], u: &mut [f64]) {
    let vv: f64 = v.iter().map(|a| a * a).sum();
    let vu: f64 = v.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
    let c = 2.0 * vu / (vv + REFLECT_EPS);
    for (ui, vi) in u.iter_mut().zip(v) {
        *ui -= c * vi;
    }
}

impl LayerParams<f64> {
    /// `Q^T u` with `Q = H_1 ... H_H`.
    pub fn q_transpose(&self, u: &[f64]) -> Vec<f64> {
        let mut out = u.to_vec();
        for v in &self.v {
            reflect(v, &mut out);
        }
        out
    }

    /// `Q u`.
    pub fn q_apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = u.to_vec();
        for v in self.v.iter().rev() {
            reflect(v, &mut out);
        }
        out
    }

    /// The orthogonal matrix `Q`, column by column.
    pub fn q_matrix(&self) -> DMatrix<f64> {
        let d = self.b.len();
        let mut q = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut ej = vec![0.0; d];
            ej[j] = 1.0;
            let col = self.q_apply(&ej);
            for i in 0..d {
                q[(i, j)] = col[i];
            }
        }
        q
    }

    /// Returns the layer output, `log|det|` and `tanh'` of the
    /// pre-activations.
    fn step(&self, z: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
        let d = z.len();
        let u = self.q_transpose(z);
        let hp: Vec<f64> = (0..d)
            .map(|i| {
                let a: f64 = self.b[i] + (i..d).map(|j| self.r_tilde[i][j] * u[j]).sum::<f64>();
                a.tanh()
            })
            .collect();
        let w: Vec<f64> = (0..d).map(|i| (i..d).map(|j| self.r[i][j] * hp[j]).sum()).collect();
        let qw = self.q_apply(&w);
        let out = z.iter().zip(&qw).map(|(a, b)| a + b).collect();
        let hprime: Vec<f64> = hp.iter().map(|t| 1.0 - t * t).collect();
        let log_det = (0..d)
            .map(|i| (1.0 + hprime[i] * self.r[i][i] * self.r_tilde[i][i]).ln())
            .sum();
        (out, log_det, hprime)
    }

    /// Input of the layer whose output is `z_out`.
    ///
    /// In the rotated basis `y = Q^T z` the layer is upper triangular, so
    /// the components are recovered last to first, each from a scalar
    /// equation `y + r tanh(rt y + c) = t` that is strictly increasing
    /// because `|r rt| < 1`.
    pub fn inverse_step(&self, z_out: &[f64]) -> Vec<f64> {
        let d = z_out.len();
        let t = self.q_transpose(z_out);
        let mut y = vec![0.0; d];
        for i in (0..d).rev() {
            // Contributions of the already known components.
            let mut known = 0.0;
            for j in i + 1..d {
                let a: f64 = self.b[j] + (j..d).map(|k| self.r_tilde[j][k] * y[k]).sum::<f64>();
                known += self.r[i][j] * a.tanh();
            }
            let c = self.b[i] + (i + 1..d).map(|k| self.r_tilde[i][k] * y[k]).sum::<f64>();
            let (r, rt) = (self.r[i][i], self.r_tilde[i][i]);
            let target = t[i] - known;
            y[i] = solve_monotone(|v| v + r * (rt * v + c).tanh() - target, |v| {
                let th = (rt * v + c).tanh();
                1.0 + r * rt * (1.0 - th * th)
            }, target - r.abs(), target + r.abs());
        }
        self.q_apply(&y)
    }

    /// Layer Jacobian `I + Q R diag(h') R~ Q^T` at input `z`.
    pub fn jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let d = z.len();
        let (_, _, hprime) = self.step(z);
        let q = self.q_matrix();
        let r = DMatrix::from_fn(d, d, |i, j| self.r[i][j]);
        let rt = DMatrix::from_fn(d, d, |i, j| self.r_tilde[i][j]);
        let h = DMatrix::from_diagonal(&DVector::from_vec(hprime));
        DMatrix::identity(d, d) + &q * r * h * rt * q.transpose()
    }
}

impl FlowParams<f64> {
    pub fn forward(&self, e: &[f64]) -> (Vec<f64>, f64) {
        let mut z: Vec<f64> = (0..e.len()).map(|i| self.mu[i] + e[i] * self.sigma[i]).collect();
        let mut log_det: f64 = self.sigma.iter().map(|s| s.ln()).sum();
        for layer in &self.layers {
            let (next, ld, _) = layer.step(&z);
            z = next;
            log_det += ld;
        }
        (z, log_det)
    }

    /// Seed `e` with `forward(e).0 == z`.
    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        let mut u = z.to_vec();
        for layer in self.layers.iter().rev() {
            u = layer.inverse_step(&u);
        }
        (0..u.len()).map(|i| (u[i] - self.mu[i]) / self.sigma[i]).collect()
    }

    /// Explicit `dz/de` as a product of layer Jacobians.
    pub fn jacobian(&self, e: &[f64]) -> DMatrix<f64> {
        let d = e.len();
        let mut jac = DMatrix::from_diagonal(&DVector::from_column_slice(&self.sigma));
        let mut z: Vec<f64> = (0..d).map(|i| self.mu[i] + e[i] * self.sigma[i]).collect();
        for layer in &self.layers {
            jac = layer.jacobian(&z) * jac;
            z = layer.step(&z).0;
        }
        jac
    }
}

/// Root of an increasing function on `[lo, hi]` (safeguarded Newton).
fn solve_monotone(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut v = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fv = f(v);
        if fv == 0.0 {
            return v;
        }
        if fv > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let next = v - fv / df(v);
        let next = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if (next - v).abs() <= 1e-15 * (1.0 + v.abs()) {
            return next;
        }
        v = next;
    }
    v
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct FlowPass<'g> {
    pub z: Vec<Var<'g>>,
    pub log_det: Var<'g>,
    /// `h(e, x) = log N(e) - log_det`.
    pub h: Var<'g>,
    /// Per layer, `tanh'` of the pre-activations.
    pub hprime: Vec<Vec<Var<'g>>>,
}

fn reflect_graph<'g>(g: &'g Graph, v: &[Var<'g>], u: &mut [Var<'g>]) {
    let vv = g.dot(v, v);
    let vu = g.dot(v, u);
    let c = vu * 2.0 / (vv + REFLECT_EPS);
    for (ui, &vi) in u.iter_mut().zip(v) {
        *ui = *ui - c * vi;
    }
}

impl<'g> LayerParams<Var<'g>> {
    pub fn q_transpose_graph(&self, g: &'g Graph, u: &[Var<'g>]) -> Vec<Var<'g>> {
        let mut out = u.to_vec();
        for v in &self.v {
            reflect_graph(g, v, &mut out);
        }
        out
    }

    pub fn q_apply_graph(&self, g: &'g Graph, u: &[Var<'g>]) -> Vec<Var<'g>> {
        let mut out = u.to_vec();
        for v in self.v.iter().rev() {
            reflect_graph(g, v, &mut out);
        }
        out
    }
}

impl<'g> FlowParams<Var<'g>> {
    pub fn forward_graph(&self, g: &'g Graph, e: &[Var<'g>]) -> FlowPass<'g> {
        let d = e.len();
        let mut z: Vec<Var<'g>> = (0..d).map(|i| self.mu[i] + e[i] * self.sigma[i]).collect();
        let mut terms: Vec<Var<'g>> = self.sigma.iter().map(|s| s.ln()).collect();
        let mut hprimes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let u = layer.q_transpose_graph(g, &z);
            let pre: Vec<Var<'g>> = (0..d)
                .map(|i| g.dot(&layer.r_tilde[i][i..], &u[i..]) + layer.b[i])
                .collect();
            let hv: Vec<Var<'g>> = pre.iter().map(|a| a.tanh()).collect();
            let hp: Vec<Var<'g>> = pre.iter().map(|a| a.tanh_prime()).collect();
            let w: Vec<Var<'g>> = (0..d).map(|i| g.dot(&layer.r[i][i..], &hv[i..])).collect();
            let qw = layer.q_apply_graph(g, &w);
            z = z.iter().zip(&qw).map(|(&a, &b)| a + b).collect();
            for i in 0..d {
                terms.push((hp[i] * layer.r[i][i] * layer.r_tilde[i][i] + 1.0).ln());
            }
            hprimes.push(hp);
        }
        let log_det = g.sum(&terms);
        let sq: Vec<Var<'g>> = e.iter().map(|v| v.square()).collect();
        let h = g.sum(&sq) * -0.5 - 0.5 * d as f64 * (2.0 * PI).ln() - log_det;
        FlowPass {
            z,
            log_det,
            h,
            hprime: hprimes,
        }
    }

    /// Solves `(dz/de)^T y = rhs` inside the graph using the layer structure:
    /// each layer Jacobian is `Q (I + M) Q^T` with `M = R diag(h') R~` upper
    /// triangular, so its inverse transpose needs one forward substitution.
    pub fn solve_transpose_graph(&self, g: &'g Graph, pass: &FlowPass<'g>, rhs: &[Var<'g>]) -> Vec<Var<'g>> {
        let d = rhs.len();
        let mut y: Vec<Var<'g>> = rhs.iter().zip(&self.sigma).map(|(&a, &s)| a / s).collect();
        for (layer, hp) in self.layers.iter().zip(&pass.hprime) {
            let u = layer.q_transpose_graph(g, &y);
            // entries M[j][i] for j <= i
            let m = |j: usize, i: usize| -> Var<'g> {
                let terms: Vec<Var<'g>> = (j..=i).map(|k| layer.r[j][k] * hp[k] * layer.r_tilde[k][i]).collect();
                g.sum(&terms)
            };
            let mut w: Vec<Var<'g>> = Vec::with_capacity(d);
            for i in 0..d {
                let mut acc = u[i];
                for (j, &wj) in w.iter().enumerate() {
                    acc = acc - m(j, i) * wj;
                }
                w.push(acc / (m(i, i) + 1.0));
            }
            y = layer.q_apply_graph(g, &w);
        }
        y
    }
}
