//! Squared Frobenius norm of a mixed second-derivative block, exact and via
//! random probes.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, Graph, Var};

/// Distribution of probe entries; both have zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    #[default]
    Rademacher,
    Gaussian,
}

/// One probe vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub eta: Vec<f64>,
    pub kind: ProbeKind,
}

impl ProbeKind {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            ProbeKind::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            ProbeKind::Gaussian => rng.sample(StandardNormal),
        }
    }
}

impl Probe {
    pub fn sample<R: Rng + ?Sized>(kind: ProbeKind, dim: usize, rng: &mut R) -> Self {
        Self {
            eta: (0..dim).map(|_| kind.draw(rng)).collect(),
            kind,
        }
    }
}

/// `sum_{i,j} (d^2 r / dx_i dz_j)^2`, built with nested gradients.
pub fn cross_norm_exact<'g>(g: &'g Graph, r: Var<'g>, xs: &[Var<'g>], zs: &[Var<'g>]) -> Var<'g> {
    let gx = g.gradient_or_zero(r, xs);
    let mut terms = Vec::with_capacity(xs.len() * zs.len());
    for gi in &gx.nodes {
        let row = g.gradient_or_zero(*gi, zs);
        terms.extend(row.nodes.iter().map(|v| v.square()));
    }
    g.sum(&terms)
}

/// `|grad_z (eta . grad_x r)|^2` for one probe `eta` (graph nodes, so the
/// probe can vary per lane). Its expectation over probes is
/// [`cross_norm_exact`].
///
/// Gradients with respect to a shared variable sum over lanes, so `xs` and
/// `zs` must live on lanes at least as fine as the probe's.
pub fn cross_norm_probe<'g>(
    g: &'g Graph,
    r: Var<'g>,
    xs: &[Var<'g>],
    zs: &[Var<'g>],
    eta: &[Var<'g>],
) -> Result<Var<'g>, AutodiffError> {
    if eta.len() != xs.len() {
        return Err(AutodiffError::ProbeDimension {
            probe: eta.len(),
            expected: xs.len(),
        });
    }
    let seeds: Vec<(Var<'g>, Var<'g>)> = vec![(r, g.constant(1.0))];
    let gx: Vec<Var<'g>> = g
        .vjp(&seeds, xs)
        .into_iter()
        .map(|c| c.unwrap_or_else(|| g.constant(0.0)))
        .collect();
    let s = g.dot(eta, &gx);
    let v = g.gradient_or_zero(s, zs);
    let sq: Vec<Var<'g>> = v.nodes.iter().map(|c| c.square()).collect();
    Ok(g.sum(&sq))
}
