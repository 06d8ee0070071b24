//! Compatibility by linear feasibility over the entries of a joint table.
//!
//! A joint `pi` over x-rows and z-columns has conditionals `p(x|z)` and
//! `q(z|x)` exactly when `pi(i,j) = p(i|j) sum_k pi(k,j)` and
//! `pi(i,j) = q(j|i) sum_k pi(i,k)` for all cells; both sides vanish where a
//! marginal does, so conditioning on null events is unconstrained. Together
//! with `pi >= 0` and total mass 1 this is a linear feasibility problem.

use cygen_core::finite::FiniteCond;
use minilp::{ComparisonOp, OptimizationDirection, Problem};

/// A feasible joint (x-rows, z-columns) if one exists.
pub fn compatible_joint(p: &FiniteCond, q: &FiniteCond) -> Option<Vec<Vec<f64>>> {
    let (nx, nz) = (p.n_out(), p.n_given());
    assert_eq!((q.n_out(), q.n_given()), (nz, nx), "q must be oriented z|x");
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<_>> = (0..nx)
        .map(|_| (0..nz).map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect())
        .collect();
    let all: Vec<_> = vars.iter().flatten().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(all, ComparisonOp::Eq, 1.0);
    for i in 0..nx {
        for j in 0..nz {
            let mut col: Vec<_> = (0..nx).map(|k| (vars[k][j], -p.get(i, j))).collect();
            col[i].1 += 1.0;
            lp.add_constraint(col, ComparisonOp::Eq, 0.0);
            let mut row: Vec<_> = (0..nz).map(|k| (vars[i][k], -q.get(j, i))).collect();
            row[j].1 += 1.0;
            lp.add_constraint(row, ComparisonOp::Eq, 0.0);
        }
    }
    let sol = lp.solve().ok()?;
    Some(
        vars.iter()
            .map(|r| r.iter().map(|&v| *sol.var_value(v)).collect())
            .collect(),
    )
}

/// Whether the pair admits any compatible joint.
pub fn is_compatible(p: &FiniteCond, q: &FiniteCond) -> bool {
    compatible_joint(p, q).is_some()
}
