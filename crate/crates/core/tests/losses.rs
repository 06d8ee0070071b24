use cygen_core::autodiff::{Graph, Level, Program, Var};
use cygen_core::losses::{compat_explicit, LossGraph, LossWeights};
use cygen_core::models::{Activation, FlowConditional, FlowConfig, GaussianConditional, Mlp};
use cygen_testkit::affine::AffineFixture;
use cygen_testkit::numeric_flow;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Column-major lane data for one evaluation.
struct Data {
    batch: usize,
    mc: usize,
    e_level: Level,
    x: Vec<Vec<f64>>,
    e: Vec<Vec<f64>>,
    eta: Vec<Vec<f64>>,
}

impl Data {
    /// One lane per point, seeds at the batch level.
    fn batch(points: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Self {
        let n = points.len();
        Self {
            batch: n,
            mc: 1,
            e_level: Level::BATCH,
            x: columns(points),
            e: normal_columns(rng, 2, n),
            eta: rademacher_columns(rng, 2, n),
        }
    }

    /// `k` seeds per point at the replicate level.
    fn replicated(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Self {
        let n = points.len();
        Self {
            batch: n,
            mc: k,
            e_level: Level::MC,
            x: columns(points),
            e: normal_columns(rng, 2, n * k),
            eta: Vec::new(),
        }
    }
}

fn columns(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..points[0].len()).map(|k| points.iter().map(|p| p[k]).collect()).collect()
}

fn normal_columns(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<Vec<f64>> {
    (0..d).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

fn rademacher_columns(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|_| (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
        .collect()
}

fn normal_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..2).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

/// Builds the graph with `build`, binds `d` and returns every output.
fn run<F>(p: &GaussianConditional, q: &FlowConditional, d: &Data, build: F) -> Vec<Vec<f64>>
where
    F: for<'g> Fn(&LossGraph<'g>, &[Var<'g>], &[Var<'g>], &[Var<'g>]) -> Vec<Var<'g>>,
{
    let g = Graph::new();
    let lg = LossGraph::new(&g, p, q);
    let x = g.inputs("x", p.d_x(), Level::BATCH);
    let e = g.inputs("e", q.d_z(), d.e_level);
    let eta = g.inputs("eta", p.d_x(), Level::BATCH);
    let outs = build(&lg, &x, &e, &eta);
    let prog = Program::compile(&g, &outs).unwrap();
    let mut b = prog.bindings(d.batch, d.mc);
    lg.bind(&mut b, p, q);
    b.set_all(&x, &d.x);
    b.set_all(&e, &d.e);
    if !d.eta.is_empty() {
        b.set_all(&eta, &d.eta);
    }
    prog.eval(&b).unwrap()
}

fn run1<F>(p: &GaussianConditional, q: &FlowConditional, d: &Data, build: F) -> Vec<f64>
where
    F: for<'g> Fn(&LossGraph<'g>, &[Var<'g>], &[Var<'g>], &[Var<'g>]) -> Var<'g>,
{
    run(p, q, d, |lg, x, e, eta| vec![build(lg, x, e, eta)]).remove(0)
}

fn small_decoder(rng: &mut ChaCha8Rng) -> GaussianConditional {
    let net = Mlp::uniform(vec![2, 8, 2], Activation::Tanh, Activation::Identity).unwrap();
    GaussianConditional::init(net, 0.2, rng).unwrap()
}

fn small_encoder(rng: &mut ChaCha8Rng, n_flows: usize) -> FlowConditional {
    let cfg = FlowConfig::with_hidden(2, 2, &[8], n_flows, 2).unwrap();
    let mut q = FlowConditional::init(cfg, rng).unwrap();
    for v in &mut q.params {
        *v *= 0.8;
    }
    q
}

/// Encoder whose output does not depend on `x`, with nontrivial flows.
fn x_free_encoder(rng: &mut ChaCha8Rng) -> FlowConditional {
    let cfg = FlowConfig {
        d_x: 2,
        d_z: 2,
        cqnn: Mlp::new(vec![2], vec![]).unwrap(),
        n_flows: 2,
        n_householder: 2,
    };
    let mut q = FlowConditional::init(cfg, rng).unwrap();
    for b in q.blocks() {
        if b.name.ends_with(".weight") {
            q.set_block(&b.name, &vec![0.0; b.len()]).unwrap();
        }
    }
    q
}

/// Decoder whose mean does not depend on `z`.
fn z_free_decoder(rng: &mut ChaCha8Rng) -> GaussianConditional {
    let mut p = small_decoder(rng);
    // First-layer weights are the leading block.
    let n_w = p.blocks()[0].len();
    for v in &mut p.params[..n_w] {
        *v = 0.0;
    }
    p
}

#[test]
fn exact_compat_vanishes_on_affine_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fx = AffineFixture::standard();
    let p = fx.decoder();
    let pts = normal_points(&mut rng, 20, 1.5);
    for n_flows in [0, 2] {
        let q = fx.encoder_with_layers(n_flows);
        let d = Data::batch(&pts, &mut rng);
        let lanes = run1(&p, &q, &d, |lg, x, e, _| lg.compat_exact_lanes(&p, &q, x, e));
        for v in lanes {
            assert!(v.abs() < 1e-10, "compat {v} with {n_flows} zero layers");
        }
    }

    // Breaking the tied relation makes it positive, matching the closed form.
    let off = AffineFixture::new(0.5, [0.8, 0.6], [0.2, -0.1], 1.0, 0.5, [0.3, -0.2]);
    let mut p = off.decoder();
    p.params[1] += 0.3;
    let q = off.encoder();
    let d = Data::batch(&pts, &mut rng);
    let lanes = run1(&p, &q, &d, |lg, x, e, _| lg.compat_exact_lanes(&p, &q, x, e));
    // Cross derivative is W_d/sd2 - W_e^T/se2 = [[0, 0.3], [0, 0]].
    for v in lanes {
        assert!((v - 0.09).abs() < 1e-10, "compat {v}");
    }
}

#[test]
fn bernoulli_tied_weights_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (dx, dz) = (3, 2);
    for _ in 0..10 {
        let wd: Vec<f64> = (0..dx * dz).map(|_| rng.random_range(-1.0..1.0)).collect();
        let we: Vec<f64> = (0..dz * dx).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bd: Vec<f64> = (0..dx).map(|_| rng.random_range(-1.0..1.0)).collect();
        let be: Vec<f64> = (0..dz).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = Graph::new();
        let x = g.inputs("x", dx, Level::SHARED);
        let z = g.inputs("z", dz, Level::SHARED);
        // log Bern(x; sigmoid(a)) = x a - softplus(a), relaxed to real x.
        let bern = |obs: &[Var<'_>], logits: Vec<Var<'_>>| {
            let terms: Vec<_> = obs.iter().zip(logits).map(|(&o, a)| o * a - a.softplus()).collect();
            g.sum(&terms)
        };
        let logits_p: Vec<_> = (0..dx)
            .map(|i| {
                let w: Vec<_> = (0..dz).map(|j| g.constant(wd[i * dz + j])).collect();
                g.dot(&w, &z) + bd[i]
            })
            .collect();
        let logits_q: Vec<_> = (0..dz)
            .map(|j| {
                let w: Vec<_> = (0..dx).map(|i| g.constant(we[j * dx + i])).collect();
                g.dot(&w, &x) + be[j]
            })
            .collect();
        let lp = bern(&x, logits_p);
        let lq = bern(&z, logits_q);
        let loss = compat_explicit(&g, lp, lq, &x, &z);
        let prog = Program::compile(&g, &[loss]).unwrap();
        let mut b = prog.bindings(1, 1);
        for v in x.iter().chain(&z) {
            b.set_scalar(*v, rng.random_range(0.0..1.0));
        }
        let got = prog.eval(&b).unwrap()[0][0];
        let expect: f64 = (0..dx)
            .flat_map(|i| (0..dz).map(move |j| (i, j)))
            .map(|(i, j)| (wd[i * dz + j] - we[j * dx + i]).powi(2))
            .sum();
        assert!((got - expect).abs() < 1e-12 * expect.max(1.0), "{got} vs {expect}");
    }
}

#[test]
fn factorized_ratio_has_zero_compat() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = z_free_decoder(&mut rng);
    let q = x_free_encoder(&mut rng);
    let pts = normal_points(&mut rng, 30, 1.0);
    let d = Data::batch(&pts, &mut rng);
    let outs = run(&p, &q, &d, |lg, x, e, eta| {
        vec![
            lg.compat_exact_lanes(&p, &q, x, e),
            lg.compat_hutchinson_lanes(&p, &q, x, e, eta).unwrap(),
            lg.compat_simplified_lanes(&p, &q, x, e, eta).unwrap(),
        ]
    });
    for lanes in outs {
        assert!(lanes.iter().all(|v| v.abs() < 1e-20), "{lanes:?}");
    }

    // w_nll = 0 leaves only the vanishing compat term.
    let mut rng2 = ChaCha8Rng::seed_from_u64(4);
    let d = Data::replicated(&pts, 4, &mut rng2);
    let compat_e = normal_columns(&mut rng2, 2, pts.len());
    let eta = rademacher_columns(&mut rng2, 2, pts.len());
    let g = Graph::new();
    let lg = LossGraph::new(&g, &p, &q);
    let x = g.inputs("x", 2, Level::BATCH);
    let ec = g.inputs("ec", 2, Level::BATCH);
    let et = g.inputs("eta", 2, Level::BATCH);
    let emc = g.inputs("emc", 2, Level::MC);
    let w = LossWeights {
        w_compat: 1.0,
        w_nll: 0.0,
        beta: 1.0,
    };
    let terms = lg.cygen_objective(&p, &q, &x, &ec, &et, &emc, w).unwrap();
    let prog = Program::compile(&g, &[terms.total]).unwrap();
    let mut b = prog.bindings(d.batch, d.mc);
    lg.bind(&mut b, &p, &q);
    b.set_all(&x, &d.x).set_all(&ec, &compat_e).set_all(&et, &eta).set_all(&emc, &d.e);
    assert!(prog.eval(&b).unwrap()[0][0].abs() < 1e-20);
}

#[test]
fn hutchinson_average_matches_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = small_decoder(&mut rng);
    let q = small_encoder(&mut rng, 2);
    let n_probe = 10_000;
    for _ in 0..4 {
        let pt = normal_points(&mut rng, 1, 1.0).remove(0);
        let e: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        let d = Data {
            batch: n_probe,
            mc: 1,
            e_level: Level::BATCH,
            x: pt.iter().map(|&v| vec![v; n_probe]).collect(),
            e: e.iter().map(|&v| vec![v; n_probe]).collect(),
            eta: rademacher_columns(&mut rng, 2, n_probe),
        };
        let outs = run(&p, &q, &d, |lg, x, e, eta| {
            vec![
                lg.compat_exact_lanes(&p, &q, x, e),
                lg.compat_hutchinson(&p, &q, x, e, eta).unwrap(),
            ]
        });
        let (exact, hutch) = (outs[0][0], outs[1][0]);
        assert!(exact > 1e-6);
        assert!((hutch - exact).abs() < 0.02 * exact, "hutchinson {hutch} vs exact {exact}");
    }
}

#[test]
fn simplified_zero_set_matches_exact_on_affine_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pts = normal_points(&mut rng, 50, 1.5);
    for (shift, zero) in [(0.0, true), (0.05, false)] {
        let fx = AffineFixture::standard();
        let mut p = fx.decoder();
        p.params[2] += shift;
        let q = fx.encoder_with_layers(1);
        let d = Data::batch(&pts, &mut rng);
        let outs = run(&p, &q, &d, |lg, x, e, eta| {
            vec![
                lg.compat_exact_lanes(&p, &q, x, e),
                lg.compat_simplified_lanes(&p, &q, x, e, eta).unwrap(),
            ]
        });
        for (ex, si) in outs[0].iter().zip(&outs[1]) {
            if zero {
                assert!(*ex < 1e-12 && *si < 1e-12, "exact {ex} simplified {si}");
            } else {
                assert!(*ex > 1e-4 && *si > 1e-6, "exact {ex} simplified {si}");
            }
        }
    }
}

#[test]
fn simplified_is_sigma_scaled_hutchinson_for_identity_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = small_decoder(&mut rng);
    let q = small_encoder(&mut rng, 0);
    let pts = normal_points(&mut rng, 10, 1.0);
    let d = Data::batch(&pts, &mut rng);
    let outs = run(&p, &q, &d, |lg, x, e, eta| {
        vec![
            lg.compat_simplified_lanes(&p, &q, x, e, eta).unwrap(),
            lg.compat_hutchinson_lanes(&p, &q, x, e, eta).unwrap(),
        ]
    });
    for (i, x) in pts.iter().enumerate() {
        let a = q.amortized(x);
        let eta = [d.eta[0][i], d.eta[1][i]];
        let e0 = [d.e[0][i], d.e[1][i]];
        let z0: Vec<f64> = (0..2).map(|k| a.mu[k] + e0[k] * a.sigma[k]).collect();
        // Probe-contracted score gap as a function of the formal z.
        let s = |z: &[f64]| {
            let e: Vec<f64> = (0..2).map(|k| (z[k] - a.mu[k]) / a.sigma[k]).collect();
            let gp = p.grad_x_log_density(x, z);
            let gq = q.grad_x_logq(&e, x).unwrap();
            (0..2).map(|k| eta[k] * (gp[k] - gq[k])).sum::<f64>()
        };
        let gz = cygen_testkit::fd::gradient(s, &z0, 1e-5);
        let hutch: f64 = gz.iter().map(|v| v * v).sum();
        let scaled: f64 = gz.iter().zip(&a.sigma).map(|(v, sg)| (v * sg).powi(2)).sum();
        let (si, hu) = (outs[0][i], outs[1][i]);
        assert!((hu - hutch).abs() < 1e-6 * hutch.max(1e-2), "hutchinson {hu} vs {hutch}");
        assert!((si - scaled).abs() < 1e-6 * scaled.max(1e-2), "simplified {si} vs {scaled}");
    }
}

/// Test points drawn from the fixture's marginal.
fn marginal_points(fx: &AffineFixture, rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let m = fx.marginal_x_mean();
    let c = fx.marginal_x_cov();
    let l00 = c[0][0].sqrt();
    let l10 = c[1][0] / l00;
    let l11 = (c[1][1] - l10 * l10).sqrt();
    (0..n)
        .map(|_| {
            let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            vec![m[0] + l00 * a, m[1] + l10 * a + l11 * b]
        })
        .collect()
}

#[test]
fn nll_matches_closed_form_marginal() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fx = AffineFixture::standard();
    let (p, q) = (fx.decoder(), fx.encoder());
    let pts = marginal_points(&fx, &mut rng, 20);
    let d = Data::replicated(&pts, 1024, &mut rng);
    let lanes = run1(&p, &q, &d, |lg, x, e, _| lg.nll_lanes(&p, &q, x, e));
    for (pt, nll) in pts.iter().zip(&lanes) {
        let truth = fx.log_marginal_x(pt);
        let rel = (-nll - truth).abs() / truth.abs();
        assert!(rel < 0.02, "log p {truth} estimate {} rel {rel}", -nll);
    }
}

#[test]
fn nll_bias_shrinks_with_sample_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let fx = AffineFixture::standard();
    let (p, q) = (fx.decoder(), fx.encoder());
    let base = marginal_points(&fx, &mut rng, 20);
    let reps = 200;
    let pts: Vec<Vec<f64>> = (0..reps).flat_map(|_| base.iter().cloned()).collect();
    let log_p: Vec<f64> = pts.iter().map(|x| fx.log_marginal_x(x)).collect();
    let mut biases = Vec::new();
    for k in [1usize, 4, 16, 64, 256, 1024] {
        let d = Data::replicated(&pts, k, &mut rng);
        let lanes = run1(&p, &q, &d, |lg, x, e, _| lg.nll_lanes(&p, &q, x, e));
        // With u = mean_k(w) p(x), E[u] = 1 exactly, so the bias
        // E[-log u] equals E[u - 1 - log u], a lower-variance form.
        let bias: f64 = lanes
            .iter()
            .zip(&log_p)
            .map(|(nll, lp)| {
                let l = nll + lp;
                l.exp_m1() - l
            })
            .sum::<f64>()
            / pts.len() as f64;
        biases.push(bias);
    }
    for w in biases.windows(2) {
        assert!(w[1] < w[0], "bias not decreasing: {biases:?}");
    }
}

#[test]
fn nll_is_exact_when_decoder_ignores_z() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = z_free_decoder(&mut rng);
    let q = small_encoder(&mut rng, 2);
    let pts = normal_points(&mut rng, 10, 1.0);
    for k in [1, 7] {
        let d = Data::replicated(&pts, k, &mut rng);
        let lanes = run1(&p, &q, &d, |lg, x, e, _| lg.nll_lanes(&p, &q, x, e));
        for (pt, nll) in pts.iter().zip(&lanes) {
            let lp = p.log_density(pt, &[0.0, 0.0]);
            assert!((nll + lp).abs() < 1e-12, "{nll} vs {}", -lp);
        }
    }
}

#[test]
fn dae_is_below_nll() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let p = small_decoder(&mut rng);
        let q = small_encoder(&mut rng, 2);
        let pts = normal_points(&mut rng, 30, 1.0);
        let d = Data::replicated(&pts, 16, &mut rng);
        let outs = run(&p, &q, &d, |lg, x, e, _| vec![lg.dae(&p, &q, x, e), lg.nll(&p, &q, x, e)]);
        assert!(outs[0][0] <= outs[1][0] + 1e-9, "dae {} nll {}", outs[0][0], outs[1][0]);
    }
    let p = z_free_decoder(&mut rng);
    let q = small_encoder(&mut rng, 1);
    let pts = normal_points(&mut rng, 30, 1.0);
    let d = Data::replicated(&pts, 16, &mut rng);
    let outs = run(&p, &q, &d, |lg, x, e, _| vec![lg.dae(&p, &q, x, e), lg.nll(&p, &q, x, e)]);
    assert!((outs[0][0] - outs[1][0]).abs() < 1e-12);
}

#[test]
fn dae_with_deterministic_encoder_is_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = small_decoder(&mut rng);
    let mut q = small_encoder(&mut rng, 0);
    let n_c = 8;
    q.set_block("encoder.sigma.weight", &vec![0.0; 2 * n_c]).unwrap();
    q.set_block("encoder.sigma.bias", &[-40.0, -40.0]).unwrap();
    let pts = normal_points(&mut rng, 25, 1.0);
    let d = Data::replicated(&pts, 3, &mut rng);
    let dae = run1(&p, &q, &d, |lg, x, e, _| lg.dae(&p, &q, x, e))[0];
    let recon: f64 = pts
        .iter()
        .map(|x| -p.log_density(x, &q.amortized(x).mu))
        .sum::<f64>()
        / pts.len() as f64;
    assert!((dae - recon).abs() < 1e-9 * recon.abs(), "{dae} vs {recon}");
}

#[test]
fn elbo_without_kl_is_dae() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = small_decoder(&mut rng);
    let q = small_encoder(&mut rng, 2);
    let pts = normal_points(&mut rng, 30, 1.0);
    let d = Data::replicated(&pts, 8, &mut rng);
    let outs = run(&p, &q, &d, |lg, x, e, _| vec![lg.elbo(&p, &q, x, e, 0.0), lg.dae(&p, &q, x, e)]);
    assert_eq!(outs[0][0], outs[1][0]);
}

#[test]
fn elbo_kl_matches_gaussian_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p = small_decoder(&mut rng);
    let q = small_encoder(&mut rng, 0);
    let pts = normal_points(&mut rng, 20, 1.0);
    let k = 20_000;
    let d = Data::replicated(&pts, k, &mut rng);
    let outs = run(&p, &q, &d, |lg, x, e, _| vec![lg.elbo(&p, &q, x, e, 1.0), lg.elbo(&p, &q, x, e, 0.0)]);
    let kl_mc = outs[0][0] - outs[1][0];
    let kl: f64 = pts
        .iter()
        .map(|x| {
            let a = q.amortized(x);
            a.mu.iter()
                .zip(&a.sigma)
                .map(|(m, s)| 0.5 * (s * s + m * m - 1.0 - 2.0 * s.ln()))
                .sum::<f64>()
        })
        .sum::<f64>()
        / pts.len() as f64;
    assert!((kl_mc - kl).abs() < 0.01 * kl, "MC {kl_mc} closed form {kl}");
}

#[test]
fn negative_elbo_bounds_nll_on_affine_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    // Standard-normal prior so the ELBO's prior is the fixture's own.
    let a = 0.7;
    let se2 = 1.0 / (1.0 + a * a);
    let fx = AffineFixture::new(0.3, [a, a], [0.1, -0.2], 1.0, se2, [0.0, 0.0]);
    assert!(fx.prior_precision().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    let (p, q) = (fx.decoder(), fx.encoder());
    let pts = marginal_points(&fx, &mut rng, 2000);
    let d = Data::replicated(&pts, 16, &mut rng);
    let outs = run(&p, &q, &d, |lg, x, e, _| vec![lg.elbo(&p, &q, x, e, 1.0), lg.nll(&p, &q, x, e)]);
    let (neg_elbo, nll) = (outs[0][0], outs[1][0]);
    let truth: f64 = -pts.iter().map(|x| fx.log_marginal_x(x)).sum::<f64>() / pts.len() as f64;
    // Exact posterior: the bound is tight for every sample.
    assert!((neg_elbo - truth).abs() < 1e-10, "-elbo {neg_elbo} truth {truth}");
    assert!(neg_elbo >= nll, "-elbo {neg_elbo} nll {nll}");
}

#[test]
fn compat_descent_reaches_tied_relation() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let fx = AffineFixture::standard();
    let mut p = fx.decoder();
    let mut q = fx.encoder();
    for v in &mut p.params {
        *v = rng.random_range(-1.0..1.0);
    }
    let mu_w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    q.set_block("encoder.mu.weight", &mu_w).unwrap();
    // Indices of the trainable encoder block; the scale head stays fixed.
    let mut off = 0;
    let mut mu_range = 0..0;
    for b in q.blocks() {
        if b.name == "encoder.mu.weight" {
            mu_range = off..off + b.len();
        }
        off += b.len();
    }

    let pts = normal_points(&mut rng, 8, 1.0);
    let d = Data::batch(&pts, &mut rng);
    let g = Graph::new();
    let lg = LossGraph::new(&g, &p, &q);
    let x = g.inputs("x", 2, Level::BATCH);
    let e = g.inputs("e", 2, Level::BATCH);
    let loss = lg.compat_exact(&p, &q, &x, &e);
    let wrt: Vec<Var<'_>> = lg.theta.iter().chain(&lg.phi[mu_range.clone()]).copied().collect();
    let grad = g.gradient(loss, &wrt).unwrap();
    let mut outs = vec![loss];
    outs.extend(grad.nodes.iter().copied());
    let prog = Program::compile(&g, &outs).unwrap();

    let mut value = f64::INFINITY;
    for _ in 0..3000 {
        let mut b = prog.bindings(d.batch, 1);
        lg.bind(&mut b, &p, &q);
        b.set_all(&x, &d.x).set_all(&e, &d.e);
        let r = prog.eval(&b).unwrap();
        value = r[0][0];
        if value < 1e-12 {
            break;
        }
        let n_th = p.params.len();
        for (i, gv) in r[1..].iter().enumerate() {
            if i < n_th {
                p.params[i] -= 0.05 * gv[0];
            } else {
                q.params[mu_range.start + i - n_th] -= 0.05 * gv[0];
            }
        }
    }
    assert!(value < 1e-8, "compat loss {value}");
    let w_e = &q.params[mu_range];
    let ratio = fx.sd2 / fx.se2;
    for i in 0..2 {
        for j in 0..2 {
            let wd = p.params[i * 2 + j];
            assert!((wd - ratio * w_e[j * 2 + i]).abs() < 1e-4, "W_d[{i}][{j}] = {wd}");
        }
    }
}

#[test]
fn zero_compat_implies_additive_log_ratio() {
    let fx = AffineFixture::standard();
    let (p, q) = (fx.decoder(), fx.encoder_with_layers(2));
    let grid: Vec<f64> = (0..15).map(|i| -2.0 + 4.0 * i as f64 / 14.0).collect();
    let xs: Vec<[f64; 2]> = grid.iter().step_by(3).flat_map(|&a| grid.iter().step_by(3).map(move |&b| [a, b])).collect();
    let zs = xs.clone();
    let forward = |e: &[f64], x: &[f64]| q.forward(e, x);
    let r: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| {
            zs.iter()
                .map(|z| p.log_density(&x, z) - numeric_flow::log_density(forward, z, &x, &[0.0, 0.0]).unwrap())
                .collect()
        })
        .collect();
    let (nx, nz) = (xs.len(), zs.len());
    let row: Vec<f64> = r.iter().map(|v| v.iter().sum::<f64>() / nz as f64).collect();
    let col: Vec<f64> = (0..nz).map(|j| r.iter().map(|v| v[j]).sum::<f64>() / nx as f64).collect();
    let all = row.iter().sum::<f64>() / nx as f64;
    let mut worst: f64 = 0.0;
    for i in 0..nx {
        for j in 0..nz {
            worst = worst.max((r[i][j] - row[i] - col[j] + all).abs());
        }
    }
    assert!(worst < 1e-6, "additive-fit residual {worst}");

    // Sanity: the ratio itself is far from constant.
    let spread = r.iter().flatten().fold(0.0f64, |m, v| m.max((v - all).abs()));
    assert!(spread > 0.1);
}

#[test]
fn objective_without_compat_is_nll() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let p = small_decoder(&mut rng);
    let q = small_encoder(&mut rng, 2);
    let pts = normal_points(&mut rng, 12, 1.0);
    let d = Data::replicated(&pts, 16, &mut rng);
    let eta = rademacher_columns(&mut rng, 2, pts.len());
    let ec = normal_columns(&mut rng, 2, pts.len());
    let g = Graph::new();
    let lg = LossGraph::new(&g, &p, &q);
    let x = g.inputs("x", 2, Level::BATCH);
    let ecv = g.inputs("ec", 2, Level::BATCH);
    let et = g.inputs("eta", 2, Level::BATCH);
    let emc = g.inputs("emc", 2, Level::MC);
    let w = LossWeights {
        w_compat: 0.0,
        ..LossWeights::default()
    };
    let terms = lg.cygen_objective(&p, &q, &x, &ecv, &et, &emc, w).unwrap();
    let prog = Program::compile(&g, &[terms.total, terms.nll, terms.compat]).unwrap();
    let mut b = prog.bindings(d.batch, d.mc);
    lg.bind(&mut b, &p, &q);
    b.set_all(&x, &d.x).set_all(&ecv, &ec).set_all(&et, &eta).set_all(&emc, &d.e);
    let r = prog.eval(&b).unwrap();
    assert_eq!(r[0][0], r[1][0]);
    assert!(r[2][0] > 0.0);

    let bad = LossWeights {
        w_compat: -1.0,
        ..LossWeights::default()
    };
    assert!(lg.cygen_objective(&p, &q, &x, &ecv, &et, &emc, bad).is_err());
}


