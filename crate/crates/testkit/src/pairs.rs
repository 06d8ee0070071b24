//! Random finite conditional pairs, compatible by construction or perturbed.

use cygen_core::finite::{conditionals_of, FiniteCond};
use rand::Rng;

/// A generated pair with the joint it was derived from (if any).
#[derive(Debug, Clone)]
pub struct PairCase {
    pub p: FiniteCond,
    pub q: FiniteCond,
    /// Joint (x-rows, z-columns) whose conditionals are `p` and `q`;
    /// `None` after perturbation.
    pub source: Option<Vec<Vec<f64>>>,
}

/// Positive joint with entries in `[0.05, 1)`, normalized.
pub fn positive_joint<R: Rng + ?Sized>(rng: &mut R, nx: usize, nz: usize) -> Vec<Vec<f64>> {
    let mut t: Vec<Vec<f64>> = (0..nx)
        .map(|_| (0..nz).map(|_| rng.random_range(0.05..1.0)).collect())
        .collect();
    normalize(&mut t);
    t
}

fn normalize(t: &mut [Vec<f64>]) {
    let s: f64 = t.iter().flatten().sum();
    for v in t.iter_mut().flatten() {
        *v /= s;
    }
}

/// Random joint with one of three support shapes: full, random sparse, or
/// block diagonal.
pub fn random_joint<R: Rng + ?Sized>(rng: &mut R, nx: usize, nz: usize) -> Vec<Vec<f64>> {
    let mut t = positive_joint(rng, nx, nz);
    match rng.random_range(0..3) {
        0 => {}
        1 => {
            for v in t.iter_mut().flatten() {
                if rng.random_bool(0.4) {
                    *v = 0.0;
                }
            }
            if t.iter().flatten().all(|&v| v == 0.0) {
                t[0][0] = 1.0;
            }
        }
        _ => {
            let blocks = rng.random_range(2..=nx.min(nz).min(3));
            let bx: Vec<usize> = (0..nx).map(|i| i * blocks / nx).collect();
            let bz: Vec<usize> = (0..nz).map(|j| j * blocks / nz).collect();
            for (i, row) in t.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    if bx[i] != bz[j] {
                        *v = 0.0;
                    }
                }
            }
        }
    }
    normalize(&mut t);
    t
}

fn random_column<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut c: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let s: f64 = c.iter().sum();
    for v in &mut c {
        *v /= s;
    }
    c
}

/// Conditionals of `joint`; each null-marginal slice is left zero or filled
/// with a random distribution (either is a valid version of the
/// conditional).
pub fn pair_from_joint<R: Rng + ?Sized>(rng: &mut R, joint: &[Vec<f64>]) -> (FiniteCond, FiniteCond) {
    let (p, q) = conditionals_of(joint).expect("valid joint");
    let (nx, nz) = (p.n_out(), p.n_given());
    let mut pt = p.entries().to_vec();
    for j in 0..nz {
        if p.is_zero_column(j) && rng.random_bool(0.5) {
            for (i, v) in random_column(rng, nx).into_iter().enumerate() {
                pt[i * nz + j] = v;
            }
        }
    }
    let mut qt = q.entries().to_vec();
    for i in 0..nx {
        if q.is_zero_column(i) && rng.random_bool(0.5) {
            for (j, v) in random_column(rng, nz).into_iter().enumerate() {
                qt[j * nx + i] = v;
            }
        }
    }
    (
        FiniteCond::normalized(nx, nz, pt).expect("valid p"),
        FiniteCond::normalized(nz, nx, qt).expect("valid q"),
    )
}

/// Adds 0.1 to one entry of a nonzero column of `p` and renormalizes it.
pub fn perturb<R: Rng + ?Sized>(rng: &mut R, p: &FiniteCond) -> FiniteCond {
    let (nx, nz) = (p.n_out(), p.n_given());
    let cols: Vec<usize> = (0..nz).filter(|&j| !p.is_zero_column(j)).collect();
    let j = cols[rng.random_range(0..cols.len())];
    let i = rng.random_range(0..nx);
    let mut t = p.entries().to_vec();
    t[i * nz + j] += 0.1;
    FiniteCond::normalized(nx, nz, t).expect("valid perturbed p")
}

/// A pair with sizes in `2..=max_n`; compatible by construction when
/// `compatible`, otherwise `p` is perturbed.
pub fn random_case<R: Rng + ?Sized>(rng: &mut R, max_n: usize, compatible: bool) -> PairCase {
    let nx = rng.random_range(2..=max_n);
    let nz = rng.random_range(2..=max_n);
    let joint = random_joint(rng, nx, nz);
    let (p, q) = pair_from_joint(rng, &joint);
    if compatible {
        PairCase { p, q, source: Some(joint) }
    } else {
        PairCase {
            p: perturb(rng, &p),
            q,
            source: None,
        }
    }
}
