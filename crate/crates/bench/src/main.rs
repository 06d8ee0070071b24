use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cygen_bench::config::{Dataset, Method, RunConfig, SamplerKind};
use cygen_bench::data;
use cygen_bench::eval::{generate_samples, load_checkpoint, write_samples};
use cygen_bench::run::{evaluate_checkpoint, train_and_evaluate};
use cygen_bench::BenchError;
use cygen_core::finite::{analyze, read_p_csv, read_q_csv, ReportJson};
use cygen_core::samplers::{init_from_prior, sgld_x, sgld_z, SgldConfig};

#[derive(Parser)]
#[command(name = "cygen", version, about = "Train, sample and evaluate cyclic-conditional models on 2D toy data")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a labeled toy dataset as CSV.
    GenData {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Output file (standard output when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model, then evaluate it.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Skip the evaluation after training.
        #[arg(long)]
        no_eval: bool,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to load (default: checkpoint.json in the output directory).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Decide compatibility of a pair of finite conditional tables.
    AnalyzeDiscrete {
        /// p(x|z) as an x-by-z table with unit column sums.
        p: PathBuf,
        /// q(z|x) as an x-by-z table with unit row sums.
        q: PathBuf,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a sampler from a checkpoint and write its trajectory or samples.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "sgld_z")]
        sampler: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 3e-4)]
        eps: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Record SGLD states every this many steps (0: final samples only).
        #[arg(long, default_value_t = 0)]
        record_every: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    pretrain_steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    w_compat: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    n_flows: Option<usize>,
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<(RunConfig, u64), BenchError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(m) = &self.method {
            cfg.method = m.parse::<Method>()?;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = d.parse::<Dataset>()?;
        }
        if let Some(v) = self.steps {
            cfg.optim.steps = v;
        }
        if let Some(v) = self.pretrain_steps {
            cfg.optim.pretrain_steps = v;
        }
        if let Some(v) = self.lr {
            cfg.optim.lr = v;
        }
        if let Some(v) = self.w_compat {
            cfg.loss.w_compat = v;
        }
        if let Some(v) = self.batch_size {
            cfg.optim.batch_size = v;
        }
        if let Some(v) = self.n_flows {
            cfg.model.n_flows = v;
        }
        if let Some(s) = &self.sampler {
            cfg.sampler.kind = Some(s.parse::<SamplerKind>()?);
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        cfg.seed = Some(self.seed);
        cfg.validate()?;
        Ok((cfg, self.seed))
    }
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { dataset, n, seed, out } => {
            let ds: Dataset = dataset.parse()?;
            if n == 0 {
                return Err(BenchError::Usage("--n must be positive".into()).into());
            }
            data::generate(ds, n, seed).write_csv(output(out.as_ref())?)?;
        }
        Cmd::Train { run, no_eval } => {
            let (cfg, seed) = run.config()?;
            let res = train_and_evaluate(&cfg, seed, !no_eval)?;
            if let Some(reason) = &res.train.diverged {
                eprintln!("training diverged: {reason}");
            }
            eprintln!("wrote {}", cfg.out_dir.display());
        }
        Cmd::Eval { run, checkpoint } => {
            let (cfg, seed) = run.config()?;
            evaluate_checkpoint(&cfg, seed, checkpoint.as_deref())?;
            eprintln!("wrote {}", cfg.out_dir.display());
        }
        Cmd::AnalyzeDiscrete { p, q, out } => {
            let open = |path: &PathBuf| File::open(path).with_context(|| format!("opening {}", path.display()));
            let pt = read_p_csv(open(&p)?).map_err(|e| BenchError::Usage(format!("{}: {e}", p.display())))?;
            let qt = read_q_csv(open(&q)?).map_err(|e| BenchError::Usage(format!("{}: {e}", q.display())))?;
            let report = analyze(&pt, &qt).map_err(|e| BenchError::Usage(e.to_string()))?;
            let mut w = output(out.as_ref())?;
            serde_json::to_writer_pretty(&mut w, &ReportJson::from(&report))?;
            writeln!(w)?;
        }
        Cmd::Sample {
            checkpoint,
            sampler,
            n,
            seed,
            eps,
            steps,
            record_every,
            out,
        } => {
            let kind: SamplerKind = sampler.parse()?;
            let (p, q) = load_checkpoint(&checkpoint)?;
            let sg = SgldConfig {
                eps,
                n_steps: steps,
                record_every,
                ..SgldConfig::default()
            };
            sg.validate().map_err(|e| BenchError::Usage(e.to_string()))?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            match kind {
                SamplerKind::SgldX | SamplerKind::SgldZ if record_every > 0 => {
                    let mut chains = init_from_prior(&p, n, seed);
                    let traj = if kind == SamplerKind::SgldX {
                        sgld_x(&p, &q, &mut chains, &sg)?
                    } else {
                        sgld_z(&p, &q, &mut chains, &sg)?
                    };
                    traj.write_csv(file)?;
                }
                _ => {
                    let mut cfg = RunConfig::new(Dataset::Pinwheel, Method::Cygen);
                    cfg.sampler.eps = eps;
                    cfg.sampler.n_steps = steps;
                    let (samples, _) = generate_samples(&p, &q, kind, &cfg, n, seed)?;
                    write_samples(file, &samples)?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<BenchError>().is_some_and(BenchError::is_usage);
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
