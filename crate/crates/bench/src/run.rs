//! End-to-end runs writing their artifacts to the output directory.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::eval::{
    evaluate, load_checkpoint, save_checkpoint, train_data, write_eval_artifacts, Evaluation, MetricsReport, RunDir,
    TrainSummary, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE,
};
use crate::train::{train, TrainOutcome};
use crate::BenchError;

pub struct RunResult {
    pub train: TrainOutcome,
    pub evaluation: Option<Evaluation>,
    pub report: MetricsReport,
}

/// Trains, writes the checkpoint, then (if `with_eval`) evaluates; metrics
/// are written even when training diverged.
pub fn train_and_evaluate(cfg: &RunConfig, seed: u64, with_eval: bool) -> Result<RunResult, BenchError> {
    let dir = RunDir::create(&cfg.out_dir)?;
    fs::write(dir.file(CONFIG_FILE), cfg.to_toml()?)?;
    let data = train_data(cfg, seed);
    let outcome = train(cfg, seed, &data)?;
    save_checkpoint(&dir, &outcome.p, &outcome.q)?;
    let mut report = MetricsReport::new(cfg, seed);
    report.train = Some(TrainSummary::from(&outcome));
    report.save(&dir.file(METRICS_FILE))?;
    let evaluation = if with_eval {
        let ev = evaluate(&outcome.p, &outcome.q, cfg, seed)?;
        write_eval_artifacts(&dir, cfg, &ev)?;
        report.evaluation = Some(ev.summary.clone());
        report.save(&dir.file(METRICS_FILE))?;
        Some(ev)
    } else {
        None
    };
    Ok(RunResult {
        train: outcome,
        evaluation,
        report,
    })
}

/// Evaluates a saved checkpoint into `cfg.out_dir`, keeping the training
/// section of an existing metrics file from the same run.
pub fn evaluate_checkpoint(cfg: &RunConfig, seed: u64, checkpoint: Option<&Path>) -> Result<MetricsReport, BenchError> {
    let dir = RunDir::create(&cfg.out_dir)?;
    let ckpt = checkpoint.map_or_else(|| dir.file(CHECKPOINT_FILE), Path::to_path_buf);
    let (p, q) = load_checkpoint(&ckpt)?;
    let mut report = MetricsReport::new(cfg, seed);
    if let Ok(prev) = MetricsReport::load(&dir.file(METRICS_FILE)) {
        if prev.run == report.run {
            report.train = prev.train;
        }
    }
    let ev = evaluate(&p, &q, cfg, seed)?;
    write_eval_artifacts(&dir, cfg, &ev)?;
    report.evaluation = Some(ev.summary);
    report.save(&dir.file(METRICS_FILE))?;
    Ok(report)
}
