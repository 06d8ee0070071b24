//! Sample generation, metrics and run artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use cygen_core::models::{Checkpoint, FlowConditional, GaussianConditional};
use cygen_core::samplers::{ancestral, chain_rng, gibbs_chain, init_from_prior, sgld_x, sgld_z, SamplerError, Trajectory};

use crate::config::{RunConfig, SamplerKind};
use crate::data::{self, LabeledPoints};
use crate::metrics::{generation_metrics, histogram2d, latent_metrics, Clusters, GenerationMetrics, LatentMetrics};
use crate::train::{LogRecord, TrainOutcome};
use crate::BenchError;

pub const METRICS_FILE: &str = "metrics.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HIST_FILE: &str = "hist2d.csv";
pub const LATENT_FILE: &str = "latent_scatter.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const SCHEMA_VERSION: u32 = 1;

/// Seed offsets that keep the data splits and sampler noise of one run
/// apart.
pub const TRAIN_DATA_STREAM: u64 = 0;
pub const TEST_DATA_STREAM: u64 = 1;
const SAMPLER_STREAM: u64 = 2;
const POSTERIOR_STREAM: u64 = 3;

fn derived_seed(seed: u64, stream: u64) -> u64 {
    chain_rng(seed, stream as usize).random()
}

pub fn train_data(cfg: &RunConfig, seed: u64) -> LabeledPoints {
    data::generate(cfg.dataset, cfg.n_train, derived_seed(seed, TRAIN_DATA_STREAM))
}

pub fn test_data(cfg: &RunConfig, seed: u64) -> LabeledPoints {
    data::generate(cfg.dataset, cfg.eval.n_test, derived_seed(seed, TEST_DATA_STREAM))
}

/// Final samples of `n` chains of the chosen sampler, started from
/// `z ~ N(0, I)`, `x ~ p(x|z)`. Latent SGLD decodes its final latents
/// through `p(x|z)`.
pub fn generate_samples(
    p: &GaussianConditional,
    q: &FlowConditional,
    kind: SamplerKind,
    cfg: &RunConfig,
    n: usize,
    seed: u64,
) -> Result<(Vec<[f64; 2]>, Trajectory), SamplerError> {
    let seed = derived_seed(seed, SAMPLER_STREAM);
    let sg = cfg.sampler.sgld();
    let mut chains = init_from_prior(p, n, seed);
    let traj = match kind {
        SamplerKind::Ancestral => Trajectory::default(),
        SamplerKind::SgldX => sgld_x(p, q, &mut chains, &sg)?,
        SamplerKind::SgldZ => {
            let t = sgld_z(p, q, &mut chains, &sg)?;
            for c in chains.iter_mut() {
                c.x = p.sample(&c.z.clone(), c.rng());
            }
            t
        }
        SamplerKind::Gibbs => gibbs_chain(p, q, &mut chains, sg.n_steps, 0)?,
    };
    let samples = if kind == SamplerKind::Ancestral {
        ancestral(p, n, seed).into_iter().map(|(x, _)| [x[0], x[1]]).collect()
    } else {
        chains.iter().map(|c| [c.x[0], c.x[1]]).collect()
    };
    Ok((samples, traj))
}

/// Monte Carlo posterior mean `E_q[z|x]` of every point.
pub fn posterior_means(q: &FlowConditional, points: &[[f64; 2]], n_samples: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = chain_rng(derived_seed(seed, POSTERIOR_STREAM), 0);
    points
        .iter()
        .map(|x| {
            let mut m = [0.0; 2];
            for _ in 0..n_samples {
                let e: Vec<f64> = (0..q.d_z()).map(|_| rng.sample(StandardNormal)).collect();
                let (z, _) = q.forward(&e, x);
                m[0] += z[0] / n_samples as f64;
                m[1] += z[1] / n_samples as f64;
            }
            m
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub pretrain_steps: usize,
    pub wall_s: f64,
    pub diverged: bool,
    pub divergence_reason: Option<String>,
    pub log: Vec<LogRecord>,
}

impl From<&TrainOutcome> for TrainSummary {
    fn from(t: &TrainOutcome) -> Self {
        Self {
            steps: t.steps_done,
            pretrain_steps: t.pretrain_steps,
            wall_s: t.wall_s,
            diverged: t.diverged.is_some(),
            divergence_reason: t.diverged.clone(),
            log: t.log.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub sampler: String,
    pub n_samples: usize,
    /// Absent when sampling diverged.
    pub generation: Option<GenerationMetrics>,
    pub sampler_diverged: bool,
    pub sampler_error: Option<String>,
    pub latent: LatentMetrics,
    pub wall_s: f64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub run: RunInfo,
    pub train: Option<TrainSummary>,
    pub evaluation: Option<EvalSummary>,
}

impl MetricsReport {
    pub fn new(cfg: &RunConfig, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            run: RunInfo {
                dataset: cfg.dataset.to_string(),
                method: cfg.method.to_string(),
                seed,
            },
            train: None,
            evaluation: None,
        }
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        // Non-finite numbers serialize as null.
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Everything `evaluate` produces, before it is written out.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub summary: EvalSummary,
    pub samples: Vec<[f64; 2]>,
    pub test: LabeledPoints,
    pub latents: Vec<[f64; 2]>,
}

pub fn evaluate(p: &GaussianConditional, q: &FlowConditional, cfg: &RunConfig, seed: u64) -> Result<Evaluation, BenchError> {
    let start = std::time::Instant::now();
    let test = test_data(cfg, seed);
    let clusters = Clusters::from_data(&test);
    let kind = cfg.sampler_kind();
    let n = cfg.sampler.n_samples;
    let (samples, generation, sampler_error) = match generate_samples(p, q, kind, cfg, n, seed) {
        Ok((s, _)) => {
            let m = generation_metrics(&s, &clusters);
            (s, Some(m), None)
        }
        Err(e @ SamplerError::Diverged { .. }) => (Vec::new(), None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let latents = posterior_means(q, &test.points, cfg.eval.posterior_samples, seed);
    let latent = latent_metrics(&latents, &test.labels);
    Ok(Evaluation {
        summary: EvalSummary {
            sampler: kind.to_string(),
            n_samples: samples.len(),
            generation,
            sampler_diverged: sampler_error.is_some(),
            sampler_error,
            latent,
            wall_s: start.elapsed().as_secs_f64(),
        },
        samples,
        test,
        latents,
    })
}

/// Output locations of one run directory.
#[derive(Debug, Clone)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn create(path: &Path) -> Result<Self, BenchError> {
        fs::create_dir_all(path)?;
        Ok(Self(path.to_path_buf()))
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

pub fn write_histogram<W: Write>(w: W, hist: &[Vec<u64>], range: f64) -> Result<(), BenchError> {
    let bins = hist.len();
    let width = 2.0 * range / bins as f64;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x0_lo", "x0_hi", "x1_lo", "x1_hi", "count"])?;
    for (i, col) in hist.iter().enumerate() {
        for (j, &c) in col.iter().enumerate() {
            let (a, b) = (-range + i as f64 * width, -range + j as f64 * width);
            wr.write_record([a.to_string(), (a + width).to_string(), b.to_string(), (b + width).to_string(), c.to_string()])?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_latents<W: Write>(w: W, latents: &[[f64; 2]], labels: &[usize]) -> Result<(), BenchError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["z0", "z1", "label"])?;
    for (z, l) in latents.iter().zip(labels) {
        wr.write_record([z[0].to_string(), z[1].to_string(), l.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_samples<W: Write>(w: W, samples: &[[f64; 2]]) -> Result<(), BenchError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x0", "x1"])?;
    for s in samples {
        wr.write_record([s[0].to_string(), s[1].to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes the histogram, latent scatter and sample CSVs of an evaluation.
pub fn write_eval_artifacts(dir: &RunDir, cfg: &RunConfig, ev: &Evaluation) -> Result<(), BenchError> {
    let hist = histogram2d(&ev.samples, cfg.eval.hist_range, cfg.eval.hist_bins);
    write_histogram(fs::File::create(dir.file(HIST_FILE))?, &hist, cfg.eval.hist_range)?;
    write_latents(fs::File::create(dir.file(LATENT_FILE))?, &ev.latents, &ev.test.labels)?;
    write_samples(fs::File::create(dir.file(SAMPLES_FILE))?, &ev.samples)?;
    Ok(())
}

pub fn save_checkpoint(dir: &RunDir, p: &GaussianConditional, q: &FlowConditional) -> Result<(), BenchError> {
    Checkpoint::new(p, q).save(&dir.file(CHECKPOINT_FILE))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(GaussianConditional, FlowConditional), BenchError> {
    if !path.exists() {
        return Err(BenchError::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(Checkpoint::load(path)?.models()?)
}
