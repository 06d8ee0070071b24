//! Compatible affine-Gaussian pair with closed-form joint.
//!
//! Prior `z ~ N(m0, diag(s0))`, likelihood `x|z ~ N(W_d z + c_d, sd2 I)`.
//! The prior precision is chosen so the exact posterior is isotropic with
//! variance `se2`, which makes it representable by an identity-flow
//! encoder: `z|x ~ N(W_e x + c_e, se2 I)` with `W_e = (se2/sd2) W_d^T`.

use cygen_core::models::{Activation, FlowConditional, FlowConfig, GaussianConditional, Mlp};

#[derive(Debug, Clone)]
pub struct AffineFixture {
    pub w_d: [[f64; 2]; 2],
    pub c_d: [f64; 2],
    pub sd2: f64,
    pub se2: f64,
    pub m0: [f64; 2],
}

pub fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl AffineFixture {
    /// `W_d = Rot(theta) diag(a)`.
    pub fn new(theta: f64, a: [f64; 2], c_d: [f64; 2], sd2: f64, se2: f64, m0: [f64; 2]) -> Self {
        let (s, c) = theta.sin_cos();
        let w_d = [[c * a[0], -s * a[1]], [s * a[0], c * a[1]]];
        let f = Self { w_d, c_d, sd2, se2, m0 };
        assert!(f.prior_precision().iter().all(|&p| p > 0.0), "posterior variance too large");
        f
    }

    pub fn standard() -> Self {
        Self::new(0.5, [0.8, 0.6], [0.2, -0.1], 2.0, 0.25, [0.3, -0.2])
    }

    fn wtw(&self) -> [[f64; 2]; 2] {
        let w = &self.w_d;
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = w[0][i] * w[0][j] + w[1][i] * w[1][j];
            }
        }
        out
    }

    /// Diagonal prior precision `1/se2 - diag(W^T W)/sd2` (columns of
    /// `W_d` are orthogonal by construction).
    pub fn prior_precision(&self) -> [f64; 2] {
        let m = self.wtw();
        [1.0 / self.se2 - m[0][0] / self.sd2, 1.0 / self.se2 - m[1][1] / self.sd2]
    }

    pub fn prior_cov(&self) -> [[f64; 2]; 2] {
        let p = self.prior_precision();
        [[1.0 / p[0], 0.0], [0.0, 1.0 / p[1]]]
    }

    pub fn w_e(&self) -> [[f64; 2]; 2] {
        let k = self.se2 / self.sd2;
        [[k * self.w_d[0][0], k * self.w_d[1][0]], [k * self.w_d[0][1], k * self.w_d[1][1]]]
    }

    pub fn c_e(&self) -> [f64; 2] {
        let p = self.prior_precision();
        let w = &self.w_d;
        let wtc = [
            w[0][0] * self.c_d[0] + w[1][0] * self.c_d[1],
            w[0][1] * self.c_d[0] + w[1][1] * self.c_d[1],
        ];
        [
            self.se2 * (p[0] * self.m0[0] - wtc[0] / self.sd2),
            self.se2 * (p[1] * self.m0[1] - wtc[1] / self.sd2),
        ]
    }

    pub fn decoder(&self) -> GaussianConditional {
        let net = Mlp::new(vec![2, 2], vec![Activation::Identity]).unwrap();
        let w = &self.w_d;
        let params = vec![w[0][0], w[0][1], w[1][0], w[1][1], self.c_d[0], self.c_d[1]];
        GaussianConditional::new(net, self.sd2, params).unwrap()
    }

    /// Identity-flow encoder with `n_flows` zeroed flow layers.
    pub fn encoder_with_layers(&self, n_flows: usize) -> FlowConditional {
        let cqnn = Mlp::new(vec![2], vec![]).unwrap();
        let cfg = FlowConfig {
            d_x: 2,
            d_z: 2,
            cqnn,
            n_flows,
            n_householder: 2,
        };
        let mut q = FlowConditional::zeros(cfg).unwrap();
        let w = self.w_e();
        q.set_block("encoder.mu.weight", &[w[0][0], w[0][1], w[1][0], w[1][1]]).unwrap();
        q.set_block("encoder.mu.bias", &self.c_e()).unwrap();
        let s = inv_softplus(self.se2.sqrt());
        q.set_block("encoder.sigma.bias", &[s, s]).unwrap();
        q
    }

    pub fn encoder(&self) -> FlowConditional {
        self.encoder_with_layers(0)
    }

    pub fn marginal_x_mean(&self) -> [f64; 2] {
        let w = &self.w_d;
        [
            w[0][0] * self.m0[0] + w[0][1] * self.m0[1] + self.c_d[0],
            w[1][0] * self.m0[0] + w[1][1] * self.m0[1] + self.c_d[1],
        ]
    }

    pub fn marginal_x_cov(&self) -> [[f64; 2]; 2] {
        let s = self.prior_cov();
        let w = &self.w_d;
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = (0..2).map(|k| w[i][k] * s[k][k] * w[j][k]).sum::<f64>();
            }
            out[i][i] += self.sd2;
        }
        out
    }

    pub fn log_marginal_x(&self, x: &[f64]) -> f64 {
        gauss2_log_density(x, &self.marginal_x_mean(), &self.marginal_x_cov())
    }
}

/// Bivariate normal log density.
pub fn gauss2_log_density(x: &[f64], mean: &[f64; 2], cov: &[[f64; 2]; 2]) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let d = [x[0] - mean[0], x[1] - mean[1]];
    let q = (cov[1][1] * d[0] * d[0] - 2.0 * cov[0][1] * d[0] * d[1] + cov[0][0] * d[1] * d[1]) / det;
    -0.5 * q - 0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln()
}
