use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use cygen_core::losses::LossWeights;
use cygen_core::models::{Activation, FlowConditional, FlowConfig, GaussianConditional, Mlp};
use cygen_core::samplers::SgldConfig;
use rand::Rng;

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Pinwheel,
    #[serde(rename = "8gaussians")]
    EightGaussians,
}

impl Dataset {
    pub fn n_classes(self) -> usize {
        match self {
            Dataset::Pinwheel => 5,
            Dataset::EightGaussians => 8,
        }
    }
}

impl FromStr for Dataset {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pinwheel" => Ok(Dataset::Pinwheel),
            "8gaussians" => Ok(Dataset::EightGaussians),
            _ => Err(BenchError::Usage(format!("unknown dataset `{s}` (expected pinwheel or 8gaussians)"))),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::Pinwheel => "pinwheel",
            Dataset::EightGaussians => "8gaussians",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cygen,
    CygenPt,
    Dae,
    Vae,
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cygen" => Ok(Method::Cygen),
            "cygen_pt" => Ok(Method::CygenPt),
            "dae" => Ok(Method::Dae),
            "vae" => Ok(Method::Vae),
            _ => Err(BenchError::Usage(format!(
                "unknown method `{s}` (expected cygen, cygen_pt, dae or vae)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Cygen => "cygen",
            Method::CygenPt => "cygen_pt",
            Method::Dae => "dae",
            Method::Vae => "vae",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Latent-space Langevin dynamics, decoded through `p(x|z)`.
    SgldZ,
    /// Data-space Langevin dynamics.
    SgldX,
    Gibbs,
    /// `z ~ N(0, I)`, `x ~ p(x|z)`.
    Ancestral,
}

impl FromStr for SamplerKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgld_z" => Ok(SamplerKind::SgldZ),
            "sgld_x" => Ok(SamplerKind::SgldX),
            "gibbs" => Ok(SamplerKind::Gibbs),
            "ancestral" => Ok(SamplerKind::Ancestral),
            _ => Err(BenchError::Usage(format!(
                "unknown sampler `{s}` (expected sgld_z, sgld_x, gibbs or ancestral)"
            ))),
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::SgldZ => "sgld_z",
            SamplerKind::SgldX => "sgld_x",
            SamplerKind::Gibbs => "gibbs",
            SamplerKind::Ancestral => "ancestral",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_z: usize,
    /// Hidden widths of the encoder feature network.
    pub encoder_hidden: Vec<usize>,
    /// Hidden widths of the decoder mean network.
    pub decoder_hidden: Vec<usize>,
    pub n_flows: usize,
    pub n_householder: usize,
    /// Fixed isotropic decoder variance.
    pub decoder_var: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_z: 2,
            encoder_hidden: vec![8, 8, 8],
            decoder_hidden: vec![16, 16],
            n_flows: 8,
            n_householder: 2,
            decoder_var: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn build<R: Rng + ?Sized>(&self, d_x: usize, rng: &mut R) -> Result<(GaussianConditional, FlowConditional), BenchError> {
        let mut widths = vec![self.d_z];
        widths.extend_from_slice(&self.decoder_hidden);
        widths.push(d_x);
        let net = Mlp::uniform(widths, Activation::Tanh, Activation::Identity)?;
        let p = GaussianConditional::init(net, self.decoder_var, rng)?;
        let fc = FlowConfig::with_hidden(d_x, self.d_z, &self.encoder_hidden, self.n_flows, self.n_householder)?;
        let q = FlowConditional::init(fc, rng)?;
        Ok((p, q))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    /// Learning rate of the ELBO pretraining phase.
    pub pretrain_lr: f64,
    /// Decoder learning rate multiplier after pretraining.
    pub decoder_lr_factor: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Main-phase steps (one minibatch each).
    pub steps: usize,
    /// ELBO pretraining steps (`cygen_pt` and `dae`).
    pub pretrain_steps: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            pretrain_lr: 1e-3,
            decoder_lr_factor: 0.1,
            weight_decay: 1e-5,
            batch_size: 1000,
            steps: 10_000,
            pretrain_steps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub w_compat: f64,
    pub w_nll: f64,
    pub beta: f64,
    /// Encoder samples per point in the likelihood and reconstruction terms.
    pub k_mc: usize,
    /// Points per step used by the compatibility term (0 = whole batch).
    pub compat_batch: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_compat: 1e-5,
            w_nll: 1.0,
            beta: 1.0,
            k_mc: 16,
            compat_batch: 0,
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            w_compat: self.w_compat,
            w_nll: self.w_nll,
            beta: self.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Sampler used by `eval`; `None` picks ancestral for `vae` and latent
    /// SGLD otherwise.
    pub kind: Option<SamplerKind>,
    pub eps: f64,
    pub n_steps: usize,
    pub n_samples: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: None,
            eps: 3e-4,
            n_steps: 100,
            n_samples: 10_000,
        }
    }
}

impl SamplerConfig {
    pub fn sgld(&self) -> SgldConfig {
        SgldConfig {
            eps: self.eps,
            n_steps: self.n_steps,
            ..SgldConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Held-out points used for latent metrics and reference centroids.
    pub n_test: usize,
    /// Encoder samples averaged into each posterior mean.
    pub posterior_samples: usize,
    /// Half-width of the square histogram window.
    pub hist_range: f64,
    pub hist_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_test: 5_000,
            posterior_samples: 32,
            hist_range: 4.0,
            hist_bins: 100,
        }
    }
}

/// Everything that determines a run, apart from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Dataset,
    pub method: Method,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_n_train() -> usize {
    20_000
}

fn default_log_every() -> usize {
    100
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl RunConfig {
    pub fn new(dataset: Dataset, method: Method) -> Self {
        Self {
            dataset,
            method,
            n_train: default_n_train(),
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            sampler: SamplerConfig::default(),
            eval: EvalConfig::default(),
            log_every: default_log_every(),
            seed: None,
            out_dir: default_out_dir(),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self, BenchError> {
        let cfg: Self = toml::from_str(s).map_err(|e| BenchError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, BenchError> {
        toml::to_string(self).map_err(|e| BenchError::Usage(format!("config: {e}")))
    }

    /// The configured seed; training and evaluation refuse to run without one.
    pub fn require_seed(&self) -> Result<u64, BenchError> {
        self.seed.ok_or_else(|| BenchError::Usage("a seed is required (--seed)".into()))
    }

    pub fn sampler_kind(&self) -> SamplerKind {
        self.sampler.kind.unwrap_or(match self.method {
            Method::Vae => SamplerKind::Ancestral,
            _ => SamplerKind::SgldZ,
        })
    }

    /// Whether the schedule starts with ELBO pretraining.
    pub fn pretrains(&self) -> bool {
        matches!(self.method, Method::CygenPt | Method::Dae) && self.optim.pretrain_steps > 0
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Usage(m));
        let o = &self.optim;
        for (name, v) in [("optim.lr", o.lr), ("optim.pretrain_lr", o.pretrain_lr), ("optim.decoder_lr_factor", o.decoder_lr_factor)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(o.weight_decay.is_finite() && o.weight_decay >= 0.0) {
            return bad(format!("optim.weight_decay must be nonnegative, got {}", o.weight_decay));
        }
        if o.batch_size == 0 || o.batch_size > self.n_train {
            return bad(format!("optim.batch_size must be in 1..={}, got {}", self.n_train, o.batch_size));
        }
        if self.loss.k_mc == 0 {
            return bad("loss.k_mc must be positive".into());
        }
        if self.loss.compat_batch > o.batch_size {
            return bad(format!("loss.compat_batch {} exceeds the batch size", self.loss.compat_batch));
        }
        self.loss.weights().validate().map_err(|e| BenchError::Usage(e.to_string()))?;
        let m = &self.model;
        if !(m.decoder_var.is_finite() && m.decoder_var > 0.0) {
            return bad(format!("model.decoder_var must be positive, got {}", m.decoder_var));
        }
        if m.d_z == 0 {
            return bad("model.d_z must be positive".into());
        }
        self.sampler
            .sgld()
            .validate()
            .map_err(|e| BenchError::Usage(format!("sampler: {e}")))?;
        if self.sampler.n_samples == 0 {
            return bad("sampler.n_samples must be positive".into());
        }
        if self.eval.hist_bins == 0 || !(self.eval.hist_range > 0.0) || self.eval.n_test < self.dataset.n_classes() {
            return bad("eval: need positive bins and range, and at least one test point per class".into());
        }
        if self.eval.posterior_samples == 0 {
            return bad("eval.posterior_samples must be positive".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        Ok(())
    }
}
