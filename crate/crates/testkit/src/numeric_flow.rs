//! Numeric inversion of a flow map, used to evaluate `log q(z|x)` at
//! arbitrary `z` when only the forward map is available.

use crate::fd;

/// Solves `forward(e) = z` by damped Newton steps with a finite-difference
/// Jacobian, starting from `e0`. Returns `None` when the residual does not
/// drop below `tol` (max-norm) within 100 iterations.
pub fn invert(forward: impl Fn(&[f64]) -> Vec<f64>, z: &[f64], e0: &[f64], tol: f64) -> Option<Vec<f64>> {
    let resid = |e: &[f64]| -> Vec<f64> { forward(e).iter().zip(z).map(|(a, b)| a - b).collect() };
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut e = e0.to_vec();
    let mut r = resid(&e);
    for _ in 0..100 {
        if norm(&r) < tol {
            return Some(e);
        }
        let jac = fd::jacobian(&forward, &e, 1e-6);
        let step = solve(jac, r.clone())?;
        let mut alpha = 1.0;
        loop {
            let cand: Vec<f64> = e.iter().zip(&step).map(|(a, s)| a - alpha * s).collect();
            let rc = resid(&cand);
            if norm(&rc) < norm(&r) || alpha < 1e-8 {
                e = cand;
                r = rc;
                break;
            }
            alpha *= 0.5;
        }
    }
    (norm(&r) < tol).then_some(e)
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// `log q(z|x)` from the forward map `forward(e, x) -> (z, log|det dz/de|)`,
/// inverting numerically from the starting seed `e0`.
pub fn log_density(
    forward: impl Fn(&[f64], &[f64]) -> (Vec<f64>, f64),
    z: &[f64],
    x: &[f64],
    e0: &[f64],
) -> Option<f64> {
    let e = invert(|e| forward(e, x).0, z, e0, 1e-13)?;
    let (_, log_det) = forward(&e, x);
    let d = e.len() as f64;
    Some(-0.5 * e.iter().map(|v| v * v).sum::<f64>() - 0.5 * d * (2.0 * std::f64::consts::PI).ln() - log_det)
}
