//! Central finite differences.

/// Gradient of `f` at `x` by central differences with step `h`.
pub fn gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Jacobian `J[i][j] = d f_i / d x_j` by central differences.
pub fn jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let mut xp = x.to_vec();
    let m = f(x).len();
    let mut jac = vec![vec![0.0; x.len()]; m];
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Mixed second derivatives `d^2 f / dx_i dz_j` by a four-point stencil.
pub fn cross_hessian(f: impl Fn(&[f64], &[f64]) -> f64, x: &[f64], z: &[f64], h: f64) -> Vec<Vec<f64>> {
    let mut xp = x.to_vec();
    let mut zp = z.to_vec();
    let mut out = vec![vec![0.0; z.len()]; x.len()];
    for i in 0..x.len() {
        for j in 0..z.len() {
            let mut eval = |dx: f64, dz: f64| {
                xp[i] = x[i] + dx;
                zp[j] = z[j] + dz;
                let v = f(&xp, &zp);
                xp[i] = x[i];
                zp[j] = z[j];
                v
            };
            out[i][j] = (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h);
        }
    }
    out
}

/// Largest relative error `|a - b| / max(|b|, floor)` over paired entries.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}
