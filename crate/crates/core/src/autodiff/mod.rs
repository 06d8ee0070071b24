//! Reverse-mode automatic differentiation over lane-vectorised scalar graphs.

mod graph;
mod hutchinson;
mod program;

pub use graph::{GradHandle, Graph, Level, NodeId, Var};
pub use hutchinson::{cross_norm_exact, cross_norm_probe, Probe, ProbeKind};
pub use program::{Bindings, Program, Workspace};

pub(crate) use graph::{sigmoid, softplus};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("node {of} does not depend on any requested input")]
    NotReachable { of: NodeId },
    #[error("input `{0}` is not bound")]
    Unbound(String),
    #[error("input `{name}` has {got} values, expected {expected}")]
    BadLength {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("evaluation needs at least one batch element")]
    EmptyBatch,
    #[error("lane level {0} is not supported")]
    UnsupportedLevel(u8),
    #[error("output belongs to a different graph")]
    ForeignNode,
    #[error("probe has dimension {probe}, expected {expected}")]
    ProbeDimension { probe: usize, expected: usize },
}

/// Evaluates `outputs` once, inferring the batch size from the bound values.
///
/// Shared inputs take one value; batch inputs `batch` values and replicate
/// inputs `batch * mc` values.
pub fn forward<'g>(
    graph: &'g Graph,
    bindings: &[(Var<'g>, &[f64])],
    outputs: &[Var<'g>],
) -> Result<Vec<Vec<f64>>, AutodiffError> {
    let batch = bindings
        .iter()
        .find(|(v, _)| v.level() == Level::BATCH)
        .map_or(1, |(_, d)| d.len());
    let mc = bindings
        .iter()
        .find(|(v, _)| v.level() == Level::MC)
        .map_or(1, |(_, d)| d.len() / batch.max(1));
    let program = Program::compile(graph, outputs)?;
    let mut b = program.bindings(batch, mc);
    for (v, d) in bindings {
        b.set(*v, d);
    }
    program.eval(&b)
}

/// Single-lane convenience: all inputs shared, every output one value.
pub fn eval_scalar<'g>(
    graph: &'g Graph,
    bindings: &[(Var<'g>, f64)],
    outputs: &[Var<'g>],
) -> Result<Vec<f64>, AutodiffError> {
    let owned: Vec<(Var<'g>, Vec<f64>)> = bindings.iter().map(|(v, x)| (*v, vec![*x])).collect();
    let refs: Vec<(Var<'g>, &[f64])> = owned.iter().map(|(v, d)| (*v, d.as_slice())).collect();
    Ok(forward(graph, &refs, outputs)?
        .into_iter()
        .map(|v| v[0])
        .collect())
}
