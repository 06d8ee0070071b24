use std::collections::VecDeque;

use super::{conditionals_of, FiniteCond, FiniteError, SupportSet, FACTOR_TOL, STOCHASTIC_TOL};

/// Largest number of connected components whose unions are enumerated.
pub const MAX_COMPONENTS: usize = 16;

const ORACLE_TV_TOL: f64 = 1e-13;
const ORACLE_MAX_STEPS: usize = 1_000_000;

/// Multiplicative split `p(x|z) / q(z|x) = a(x) b(z)` on a support.
///
/// Entries outside the support's projections are zero. Within each
/// connected component the smallest x-state has `a = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationWitness {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Joint distribution over x-rows and z-columns.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMatrix {
    n_x: usize,
    n_z: usize,
    table: Vec<f64>,
}

impl JointMatrix {
    /// Normalizes a nonnegative table to total mass 1.
    pub fn from_weights(n_x: usize, n_z: usize, mut table: Vec<f64>) -> Result<Self, FiniteError> {
        if table.len() != n_x * n_z {
            return Err(FiniteError::Shape {
                rows: n_x,
                cols: n_z,
                got: table.len(),
            });
        }
        let total: f64 = table.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(FiniteError::ZeroMass);
        }
        for v in &mut table {
            *v /= total;
        }
        Ok(Self { n_x, n_z, table })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FiniteError> {
        let n_z = rows.first().map_or(0, Vec::len);
        Self::from_weights(rows.len(), n_z, rows.concat())
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.table[i * self.n_z + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.table.chunks(self.n_z).map(<[f64]>::to_vec).collect()
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        self.table.chunks(self.n_z).map(|r| r.iter().sum()).collect()
    }

    pub fn marginal_z(&self) -> Vec<f64> {
        (0..self.n_z).map(|j| (0..self.n_x).map(|i| self.get(i, j)).sum()).collect()
    }

    /// `(p(x|z), q(z|x))` of this joint; zero-marginal slices are zero.
    pub fn conditionals(&self) -> Result<(FiniteCond, FiniteCond), FiniteError> {
        conditionals_of(&self.rows())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.table
            .iter()
            .zip(&other.table)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Total variation distance to another joint of the same shape.
    pub fn tv(&self, other: &Self) -> f64 {
        0.5 * self.table.iter().zip(&other.table).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// Outcome of [`analyze`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompatReport {
    pub compatible: bool,
    pub complete_supports: Vec<SupportSet>,
    pub joints: Vec<JointMatrix>,
    pub globally_determinate: bool,
}

fn check_pair(p: &FiniteCond, q: &FiniteCond) -> Result<(usize, usize), FiniteError> {
    if p.n_out() != q.n_given() || p.n_given() != q.n_out() {
        return Err(FiniteError::Dimension(format!(
            "p is {}x{} (x|z) but q is {}x{} (z|x)",
            p.n_out(),
            p.n_given(),
            q.n_out(),
            q.n_given()
        )));
    }
    Ok((p.n_out(), p.n_given()))
}

/// Cells where the conditional is positive, laid out over (outcome, given).
///
/// For `p(x|z)` the result is on the x-by-z grid directly; for `q(z|x)` it is
/// on the z-by-x grid.
pub fn positive_regions(c: &FiniteCond) -> SupportSet {
    SupportSet::from_fn(c.n_out(), c.n_given(), |i, j| c.get(i, j) > 0.0)
}

/// Candidate sets `(W_pq, W_qp)` on the x-by-z grid.
///
/// `W_pq` collects `P_z x {z}` for every z whose positive slice `P_z` of
/// `p(.|z)` is nonempty and contained in `Q_z = {x : q(z|x) > 0}`; `W_qp`
/// collects `{x} x Q_x` symmetrically.
pub fn candidate_sets(p: &FiniteCond, q: &FiniteCond) -> Result<(SupportSet, SupportSet), FiniteError> {
    let (nx, nz) = check_pair(p, q)?;
    let mut wpq = SupportSet::empty(nx, nz);
    for j in 0..nz {
        let nonempty = (0..nx).any(|i| p.get(i, j) > 0.0);
        let contained = (0..nx).all(|i| p.get(i, j) == 0.0 || q.get(j, i) > 0.0);
        if nonempty && contained {
            for i in 0..nx {
                wpq.set(i, j, p.get(i, j) > 0.0);
            }
        }
    }
    let mut wqp = SupportSet::empty(nx, nz);
    for i in 0..nx {
        let nonempty = (0..nz).any(|j| q.get(j, i) > 0.0);
        let contained = (0..nz).all(|j| q.get(j, i) == 0.0 || p.get(i, j) > 0.0);
        if nonempty && contained {
            for j in 0..nz {
                wqp.set(i, j, q.get(j, i) > 0.0);
            }
        }
    }
    Ok((wpq, wqp))
}

/// Every cell sharing a row or a column with `s`.
pub fn stretch(s: &SupportSet) -> SupportSet {
    let px = s.proj_x();
    let pz = s.proj_z();
    SupportSet::from_fn(s.n_x(), s.n_z(), |i, j| px[i] || pz[j])
}

/// Whether `stretch(s) ∩ w == s`.
pub fn is_complete_component(s: &SupportSet, w: &SupportSet) -> bool {
    stretch(s).intersect(w) == *s
}

/// Connected components of the cells of `s`, where two cells are adjacent
/// when they share a row or a column. Ordered by their first cell.
fn components(s: &SupportSet) -> Vec<SupportSet> {
    let (nx, nz) = (s.n_x(), s.n_z());
    let mut seen = SupportSet::empty(nx, nz);
    let mut out = Vec::new();
    for (i0, j0) in s.cells() {
        if seen.get(i0, j0) {
            continue;
        }
        let mut comp = SupportSet::empty(nx, nz);
        let mut row_done = vec![false; nx];
        let mut col_done = vec![false; nz];
        let mut queue = VecDeque::from([(i0, j0)]);
        seen.set(i0, j0, true);
        while let Some((i, j)) = queue.pop_front() {
            comp.set(i, j, true);
            if !row_done[i] {
                row_done[i] = true;
                for jj in 0..nz {
                    if s.get(i, jj) && !seen.get(i, jj) {
                        seen.set(i, jj, true);
                        queue.push_back((i, jj));
                    }
                }
            }
            if !col_done[j] {
                col_done[j] = true;
                for ii in 0..nx {
                    if s.get(ii, j) && !seen.get(ii, j) {
                        seen.set(ii, j, true);
                        queue.push_back((ii, j));
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Tries to write `log p(x|z) - log q(z|x) = log a(x) + log b(z)` on the
/// cells of `s`, propagating values breadth-first from the smallest x-state
/// of each connected component. Returns `None` when some cell is
/// inconsistent or when either conditional vanishes on `s`.
pub fn check_factorization(
    p: &FiniteCond,
    q: &FiniteCond,
    s: &SupportSet,
) -> Result<Option<FactorizationWitness>, FiniteError> {
    let (nx, nz) = check_pair(p, q)?;
    if (s.n_x(), s.n_z()) != (nx, nz) {
        return Err(FiniteError::Dimension("support shape differs from the tables".into()));
    }
    let mut label = vec![0.0; nx * nz];
    for (i, j) in s.cells() {
        let (pv, qv) = (p.get(i, j), q.get(j, i));
        if pv <= 0.0 || qv <= 0.0 {
            return Ok(None);
        }
        label[i * nz + j] = pv.ln() - qv.ln();
    }
    let mut la: Vec<Option<f64>> = vec![None; nx];
    let mut lb: Vec<Option<f64>> = vec![None; nz];
    let px = s.proj_x();
    for root in 0..nx {
        if !px[root] || la[root].is_some() {
            continue;
        }
        la[root] = Some(0.0);
        // Queue entries: (is_row, index).
        let mut queue = VecDeque::from([(true, root)]);
        while let Some((is_row, k)) = queue.pop_front() {
            if is_row {
                let a = la[k].expect("row value assigned before enqueue");
                for j in 0..nz {
                    if !s.get(k, j) {
                        continue;
                    }
                    let want = label[k * nz + j] - a;
                    match lb[j] {
                        None => {
                            lb[j] = Some(want);
                            queue.push_back((false, j));
                        }
                        Some(b) if (b - want).abs() > FACTOR_TOL => return Ok(None),
                        Some(_) => {}
                    }
                }
            } else {
                let b = lb[k].expect("column value assigned before enqueue");
                for i in 0..nx {
                    if !s.get(i, k) {
                        continue;
                    }
                    let want = label[i * nz + k] - b;
                    match la[i] {
                        None => {
                            la[i] = Some(want);
                            queue.push_back((true, i));
                        }
                        Some(a) if (a - want).abs() > FACTOR_TOL => return Ok(None),
                        Some(_) => {}
                    }
                }
            }
        }
    }
    Ok(Some(FactorizationWitness {
        a: la.iter().map(|v| v.map_or(0.0, f64::exp)).collect(),
        b: lb.iter().map(|v| v.map_or(0.0, f64::exp)).collect(),
    }))
}

/// The joint `pi(x,z) ∝ q(z|x) a(x)` on `s`, zero elsewhere.
pub fn construct_joint(q: &FiniteCond, s: &SupportSet, w: &FactorizationWitness) -> Result<JointMatrix, FiniteError> {
    let (nx, nz) = (s.n_x(), s.n_z());
    if q.n_out() != nz || q.n_given() != nx || w.a.len() != nx {
        return Err(FiniteError::Dimension("q, support and witness disagree".into()));
    }
    let mut t = vec![0.0; nx * nz];
    for (i, j) in s.cells() {
        t[i * nz + j] = q.get(j, i) * w.a[i].abs();
    }
    JointMatrix::from_weights(nx, nz, t)
}

/// Rectangularity: every nonempty column slice equals the x-projection, or
/// every nonempty row slice equals the z-projection.
pub fn check_determinacy(s: &SupportSet) -> bool {
    let px = s.proj_x();
    let pz = s.proj_z();
    let cols_ok = (0..s.n_z()).all(|j| {
        let c = s.col(j);
        !c.iter().any(|&b| b) || c == px
    });
    let rows_ok = (0..s.n_x()).all(|i| {
        let r = s.row(i);
        !r.iter().any(|&b| b) || r == pz
    });
    cols_ok || rows_ok
}

/// Checks every condition of a complete support and returns the witness.
fn verify_support(
    p: &FiniteCond,
    q: &FiniteCond,
    wpq: &SupportSet,
    wqp: &SupportSet,
    s: &SupportSet,
) -> Result<Option<FactorizationWitness>, FiniteError> {
    if s.is_empty() || !is_complete_component(s, wpq) || !is_complete_component(s, wqp) {
        return Ok(None);
    }
    let (sx, sz) = (s.proj_x(), s.proj_z());
    let (wx, wz) = (wqp.proj_x(), wpq.proj_z());
    if sx.iter().zip(&wx).any(|(&a, &b)| a && !b) || sz.iter().zip(&wz).any(|(&a, &b)| a && !b) {
        return Ok(None);
    }
    check_factorization(p, q, s)
}

/// All complete supports of the pair.
///
/// A complete support is closed under stretching inside both candidate
/// sets, so it is a union of connected components of `W_pq ∩ W_qp`; every
/// nonempty union is verified explicitly. Results are ordered by the
/// component bitmask.
pub fn enumerate_complete_supports(p: &FiniteCond, q: &FiniteCond) -> Result<Vec<SupportSet>, FiniteError> {
    Ok(enumerate_with_witnesses(p, q)?.into_iter().map(|(s, _)| s).collect())
}

fn enumerate_with_witnesses(
    p: &FiniteCond,
    q: &FiniteCond,
) -> Result<Vec<(SupportSet, FactorizationWitness)>, FiniteError> {
    let (wpq, wqp) = candidate_sets(p, q)?;
    let comps = components(&wpq.intersect(&wqp));
    if comps.len() > MAX_COMPONENTS {
        return Err(FiniteError::TooManyComponents(comps.len()));
    }
    let mut out: Vec<(SupportSet, FactorizationWitness)> = Vec::new();
    for mask in 1u32..(1u32 << comps.len()) {
        let mut s = SupportSet::empty(p.n_out(), p.n_given());
        for (k, c) in comps.iter().enumerate() {
            if mask & (1 << k) != 0 {
                s = s.union(c);
            }
        }
        if out.iter().any(|(t, _)| *t == s) {
            continue;
        }
        if let Some(w) = verify_support(p, q, &wpq, &wqp, &s)? {
            out.push((s, w));
        }
    }
    Ok(out)
}

/// Full compatibility analysis of a pair.
pub fn analyze(p: &FiniteCond, q: &FiniteCond) -> Result<CompatReport, FiniteError> {
    let found = enumerate_with_witnesses(p, q)?;
    let mut complete_supports = Vec::with_capacity(found.len());
    let mut joints = Vec::with_capacity(found.len());
    for (s, w) in found {
        joints.push(construct_joint(q, &s, &w)?);
        complete_supports.push(s);
    }
    let globally_determinate = complete_supports.len() == 1 && check_determinacy(&complete_supports[0]);
    Ok(CompatReport {
        compatible: !complete_supports.is_empty(),
        complete_supports,
        joints,
        globally_determinate,
    })
}

/// Deterministic `x = f(z)` against a conditional `nu(z|x)`: the smallest
/// `x0` whose preimage `f^{-1}(x0)` carries all of `nu(.|x0)`.
pub fn dirac_compatible(f: &[usize], nu: &FiniteCond) -> Option<usize> {
    if f.len() != nu.n_out() {
        return None;
    }
    (0..nu.n_given()).find(|&x0| {
        let mass: f64 = f
            .iter()
            .enumerate()
            .filter(|&(_, &fx)| fx == x0)
            .map(|(j, _)| nu.get(j, x0))
            .sum();
        (mass - 1.0).abs() <= STOCHASTIC_TOL
    })
}

/// Stationary law of the Gibbs chain `z_t ~ q(.|x_{t-1})`,
/// `x_t ~ p(.|z_t)` started from `init` over x, as the joint of
/// `(x_t, z_t)`, i.e. `pi(x,z) = nu(z) p(x|z)` with `nu` the stationary law
/// of `z_t`.
///
/// Fails with [`FiniteError::NoConvergence`] on periodic chains; use
/// [`gibbs_stationary_oracle_lazy`] then.
pub fn gibbs_stationary_oracle(p: &FiniteCond, q: &FiniteCond, init: &[f64]) -> Result<JointMatrix, FiniteError> {
    power_iterate(p, q, init, 0.0)
}

/// As [`gibbs_stationary_oracle`] with the half-lazy kernel
/// `0.5 I + 0.5 K` on x, which has the same stationary law but no
/// periodicity.
pub fn gibbs_stationary_oracle_lazy(
    p: &FiniteCond,
    q: &FiniteCond,
    init: &[f64],
) -> Result<JointMatrix, FiniteError> {
    power_iterate(p, q, init, 0.5)
}

fn z_law(p: &FiniteCond, q: &FiniteCond, mu: &[f64]) -> Result<Vec<f64>, FiniteError> {
    let (nx, nz) = (p.n_out(), p.n_given());
    let mut nu = vec![0.0; nz];
    for i in 0..nx {
        if mu[i] == 0.0 {
            continue;
        }
        if q.is_zero_column(i) {
            return Err(FiniteError::ChainStuck(i));
        }
        for (j, v) in nu.iter_mut().enumerate() {
            *v += q.get(j, i) * mu[i];
        }
    }
    for (j, &v) in nu.iter().enumerate() {
        if v > 0.0 && p.is_zero_column(j) {
            return Err(FiniteError::ChainStuck(j));
        }
    }
    Ok(nu)
}

fn power_iterate(p: &FiniteCond, q: &FiniteCond, init: &[f64], lazy: f64) -> Result<JointMatrix, FiniteError> {
    let (nx, nz) = check_pair(p, q)?;
    if init.len() != nx {
        return Err(FiniteError::Dimension(format!("init has {} states, expected {nx}", init.len())));
    }
    let total: f64 = init.iter().sum();
    if !(total > 0.0) || init.iter().any(|&v| v < 0.0) {
        return Err(FiniteError::ZeroMass);
    }
    let mut mu: Vec<f64> = init.iter().map(|v| v / total).collect();
    let mut next = vec![0.0; nx];
    for _ in 0..ORACLE_MAX_STEPS {
        let nu = z_law(p, q, &mu)?;
        for (i, v) in next.iter_mut().enumerate() {
            let moved: f64 = (0..nz).map(|j| p.get(i, j) * nu[j]).sum();
            *v = lazy * mu[i] + (1.0 - lazy) * moved;
        }
        let tv = 0.5 * mu.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>();
        std::mem::swap(&mut mu, &mut next);
        if tv < ORACLE_TV_TOL {
            let nu = z_law(p, q, &mu)?;
            let mut t = vec![0.0; nx * nz];
            for i in 0..nx {
                for j in 0..nz {
                    t[i * nz + j] = nu[j] * p.get(i, j);
                }
            }
            return JointMatrix::from_weights(nx, nz, t);
        }
    }
    Err(FiniteError::NoConvergence(ORACLE_MAX_STEPS))
}
