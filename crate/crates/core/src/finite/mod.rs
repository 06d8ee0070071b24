//! Compatibility and determinacy of conditional tables on finite spaces.
//!
//! A pair `p(x|z)`, `q(z|x)` is compatible when some joint distribution has
//! both as its conditionals (wherever the conditioning marginal is
//! positive). With counting measure on both spaces every almost-sure
//! statement becomes an exact set statement, so the decision is exact:
//! the pair is compatible iff it has a *complete support*, a set of cells
//! that is closed under stretching inside both candidate sets, lies in their
//! projections, and on which `log(p/q)` splits as `log a(x) + log b(z)`.
//! The joint on such a support is `pi(x,z) ∝ q(z|x) a(x)`.

mod io;
mod support;
mod theory;

pub use io::{read_p_csv, read_q_csv, read_table_csv, write_joint_csv, write_p_csv, write_q_csv, write_table_csv, ReportJson};
pub use support::SupportSet;
pub use theory::{
    analyze, candidate_sets, check_determinacy, check_factorization, construct_joint, dirac_compatible,
    enumerate_complete_supports, gibbs_stationary_oracle, gibbs_stationary_oracle_lazy, is_complete_component,
    positive_regions, stretch, CompatReport, FactorizationWitness, JointMatrix, MAX_COMPONENTS,
};

use thiserror::Error;

/// Column-sum tolerance for conditional tables.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Relative tolerance for factorization consistency.
pub const FACTOR_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiniteError {
    #[error("table has {got} entries, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, got: usize },
    #[error("entry ({row},{col}) is negative or not finite: {value}")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("column {col} sums to {sum}, expected 1 or 0")]
    NotStochastic { col: usize, sum: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("support has {0} connected components, more than the supported {MAX_COMPONENTS}")]
    TooManyComponents(usize),
    #[error("joint has no mass on the support")]
    ZeroMass,
    #[error("the chain reaches state {0} whose conditional is identically zero")]
    ChainStuck(usize),
    #[error("power iteration did not converge within {0} steps")]
    NoConvergence(usize),
    #[error("io: {0}")]
    Io(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// Conditional probability table: entry `(i, j)` is the probability of
/// outcome `i` given condition `j`, so every column is a distribution (or
/// identically zero).
///
/// For `p(x|z)` outcomes are x-states and conditions z-states; for `q(z|x)`
/// it is the other way round.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteCond {
    n_out: usize,
    n_given: usize,
    table: Vec<f64>,
}

impl FiniteCond {
    /// Builds a table from row-major entries (`n_out` rows, `n_given`
    /// columns), validating stochasticity.
    pub fn new(n_out: usize, n_given: usize, table: Vec<f64>) -> Result<Self, FiniteError> {
        if table.len() != n_out * n_given || n_out == 0 || n_given == 0 {
            return Err(FiniteError::Shape {
                rows: n_out,
                cols: n_given,
                got: table.len(),
            });
        }
        for (k, &v) in table.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(FiniteError::BadEntry {
                    row: k / n_given,
                    col: k % n_given,
                    value: v,
                });
            }
        }
        for j in 0..n_given {
            let sum: f64 = (0..n_out).map(|i| table[i * n_given + j]).sum();
            if sum != 0.0 && (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(FiniteError::NotStochastic { col: j, sum });
            }
        }
        Ok(Self { n_out, n_given, table })
    }

    /// Builds a table from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FiniteError> {
        let n_given = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_given) {
            return Err(FiniteError::Dimension("ragged rows".into()));
        }
        Self::new(rows.len(), n_given, rows.concat())
    }

    /// Normalizes each column of a nonnegative matrix (zero columns stay
    /// zero).
    pub fn normalized(n_out: usize, n_given: usize, mut table: Vec<f64>) -> Result<Self, FiniteError> {
        for j in 0..n_given {
            let sum: f64 = (0..n_out).map(|i| table[i * n_given + j]).sum();
            if sum > 0.0 {
                for i in 0..n_out {
                    table[i * n_given + j] /= sum;
                }
            }
        }
        Self::new(n_out, n_given, table)
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn n_given(&self) -> usize {
        self.n_given
    }

    /// Probability of outcome `out` given condition `given`.
    #[inline]
    pub fn get(&self, out: usize, given: usize) -> f64 {
        self.table[out * self.n_given + given]
    }

    /// The same numbers indexed the other way round (`(given, out)`), not a
    /// conditional table in general.
    pub fn transposed_entries(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.table.len()];
        for i in 0..self.n_out {
            for j in 0..self.n_given {
                t[j * self.n_out + i] = self.get(i, j);
            }
        }
        t
    }

    /// Whether column `given` is identically zero.
    pub fn is_zero_column(&self, given: usize) -> bool {
        (0..self.n_out).all(|i| self.get(i, given) == 0.0)
    }

    pub fn entries(&self) -> &[f64] {
        &self.table
    }
}

/// Conditionals of a joint table `pi[i][j]` over x-rows and z-columns:
/// `(p(x|z), q(z|x))`. Columns (rows) of zero marginal become zero.
pub fn conditionals_of(joint: &[Vec<f64>]) -> Result<(FiniteCond, FiniteCond), FiniteError> {
    let nx = joint.len();
    let nz = joint.first().map_or(0, Vec::len);
    let flat: Vec<f64> = joint.concat();
    let p = FiniteCond::normalized(nx, nz, flat.clone())?;
    let mut t = vec![0.0; nx * nz];
    for i in 0..nx {
        for j in 0..nz {
            t[j * nx + i] = flat[i * nz + j];
        }
    }
    let q = FiniteCond::normalized(nz, nx, t)?;
    Ok((p, q))
}
