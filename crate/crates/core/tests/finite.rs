use cygen_core::finite::*;
use cygen_testkit::{lp, pairs};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mask(rows: &[&str]) -> SupportSet {
    SupportSet::from_strings(rows).unwrap()
}

/// Conditionals uniform on the given positive patterns: `p_rows` is the
/// x-by-z pattern of `p(x|z) > 0`, `q_rows` that of `q(z|x) > 0`.
fn uniform_pair(p_rows: &[&str], q_rows: &[&str]) -> (FiniteCond, FiniteCond) {
    let pm = mask(p_rows);
    let qm = mask(q_rows);
    let (nx, nz) = (pm.n_x(), pm.n_z());
    let pt: Vec<f64> = (0..nx)
        .flat_map(|i| (0..nz).map(move |j| (i, j)))
        .map(|(i, j)| f64::from(u8::from(pm.get(i, j))))
        .collect();
    let mut qt = vec![0.0; nx * nz];
    for i in 0..nx {
        for j in 0..nz {
            qt[j * nx + i] = f64::from(u8::from(qm.get(i, j)));
        }
    }
    (
        FiniteCond::normalized(nx, nz, pt).unwrap(),
        FiniteCond::normalized(nz, nx, qt).unwrap(),
    )
}

/// Four-by-four analogue of a support-conflict picture: rows 0-1 are the
/// "top" x-states, columns 2-3 the "right" z-states. `p(.|z)` covers all x
/// on the left and the top on the right; `q(.|x)` covers the right on top
/// and everything at the bottom.
fn quadrant_pair() -> (FiniteCond, FiniteCond) {
    uniform_pair(&["1111", "1111", "1100", "1100"], &["0011", "0011", "1111", "1111"])
}

fn two_block_joint() -> Vec<Vec<f64>> {
    vec![
        vec![0.10, 0.05, 0.0, 0.0],
        vec![0.15, 0.10, 0.0, 0.0],
        vec![0.0, 0.0, 0.20, 0.10],
        vec![0.0, 0.0, 0.05, 0.25],
    ]
}

#[test]
fn positive_regions_examples() {
    let id = FiniteCond::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert_eq!(positive_regions(&id), mask(&["10", "01"]));
    let zero_col = FiniteCond::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
    assert_eq!(positive_regions(&zero_col).col(1), vec![false, false]);
    let pos = FiniteCond::from_rows(&[vec![0.1, 0.5], vec![0.9, 0.5]]).unwrap();
    assert_eq!(positive_regions(&pos), SupportSet::full(2, 2));
}

#[test]
fn invalid_tables_are_rejected() {
    assert!(matches!(
        FiniteCond::from_rows(&[vec![0.5, 0.5], vec![0.4, 0.5]]),
        Err(FiniteError::NotStochastic { col: 0, .. })
    ));
    assert!(matches!(
        FiniteCond::from_rows(&[vec![-0.5], vec![1.5]]),
        Err(FiniteError::BadEntry { .. })
    ));
}

#[test]
fn candidate_sets_examples() {
    let (p, q) = conditionals_of(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
    let (wpq, wqp) = candidate_sets(&p, &q).unwrap();
    assert_eq!(wpq, SupportSet::full(2, 2));
    assert_eq!(wqp, SupportSet::full(2, 2));

    let (p, q) = quadrant_pair();
    let (wpq, wqp) = candidate_sets(&p, &q).unwrap();
    let top_right = mask(&["0011", "0011", "0000", "0000"]);
    assert_eq!(wpq, top_right);
    assert_eq!(wqp, top_right);

    // A zero conditional q(.|x) removes that x from W_qp.
    let p = FiniteCond::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    let q = FiniteCond::from_rows(&[vec![0.5, 0.0], vec![0.5, 0.0]]).unwrap();
    let (_, wqp) = candidate_sets(&p, &q).unwrap();
    assert_eq!(wqp.row(1), vec![false, false]);
    assert_eq!(wqp.row(0), vec![true, true]);

    let bad = FiniteCond::from_rows(&[vec![1.0, 0.0, 0.5], vec![0.0, 1.0, 0.5]]).unwrap();
    assert!(matches!(candidate_sets(&bad, &bad), Err(FiniteError::Dimension(_))));
}

#[test]
fn stretch_examples() {
    assert_eq!(stretch(&mask(&["10", "00"])), mask(&["11", "10"]));
    assert_eq!(stretch(&SupportSet::full(3, 2)), SupportSet::full(3, 2));
    assert_eq!(stretch(&SupportSet::empty(2, 3)), SupportSet::empty(2, 3));
}

#[test]
fn complete_component_examples() {
    let w = mask(&["1100", "1100", "0011", "0011"]);
    assert!(is_complete_component(&mask(&["1100", "1100", "0000", "0000"]), &w));
    assert!(is_complete_component(&SupportSet::full(3, 3), &SupportSet::full(3, 3)));
    // A proper part of a connected block stretches onto more of it.
    assert!(!is_complete_component(&mask(&["1000", "0000", "0000", "0000"]), &w));
    let w = mask(&["110", "011", "001"]);
    assert!(!is_complete_component(&mask(&["100", "000", "000"]), &w));
}

#[test]
fn full_support_pair_has_one_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let joint = pairs::positive_joint(&mut rng, 4, 3);
    let (p, q) = conditionals_of(&joint).unwrap();
    assert_eq!(enumerate_complete_supports(&p, &q).unwrap(), vec![SupportSet::full(4, 3)]);
}

#[test]
fn block_diagonal_pair_supports() {
    let (p, q) = conditionals_of(&two_block_joint()).unwrap();
    let supports = enumerate_complete_supports(&p, &q).unwrap();
    let b1 = mask(&["1100", "1100", "0000", "0000"]);
    let b2 = mask(&["0000", "0000", "0011", "0011"]);
    // Disjoint blocks carry independent gauges, so the union always
    // factorizes as well.
    assert_eq!(supports, vec![b1.clone(), b2.clone(), b1.union(&b2)]);
    let report = analyze(&p, &q).unwrap();
    assert!(report.compatible);
    assert!(!report.globally_determinate);
    assert_eq!(report.joints.len(), 3);
}

#[test]
fn quadrant_pair_support() {
    let (p, q) = quadrant_pair();
    let report = analyze(&p, &q).unwrap();
    assert_eq!(report.complete_supports, vec![mask(&["0011", "0011", "0000", "0000"])]);
    assert!(report.globally_determinate);
    let j = &report.joints[0];
    for i in 0..2 {
        for k in 2..4 {
            assert!((j.get(i, k) - 0.25).abs() < 1e-12);
        }
    }
}

#[test]
fn support_conflict_is_incompatible() {
    // As the quadrant pair, but q(.|x) covers every z on top too: any joint
    // using the top-left must then also use the bottom-left, where q(.|x)
    // would have to cover the right half as well.
    let (p, q) = uniform_pair(&["1111", "1111", "1100", "1100"], &["1111", "1111", "1111", "1111"]);
    let report = analyze(&p, &q).unwrap();
    assert!(!report.compatible);
    assert!(report.joints.is_empty());
    assert!(!lp::is_compatible(&p, &q));
}

#[test]
fn factorization_examples() {
    // Doubly stochastic table, so q(z|x) = p(x|z) numerically.
    let p = FiniteCond::from_rows(&[vec![0.3, 0.7], vec![0.7, 0.3]]).unwrap();
    let q = FiniteCond::new(2, 2, p.transposed_entries()).unwrap();
    let w = check_factorization(&p, &q, &SupportSet::full(2, 2)).unwrap().unwrap();
    assert!(w.a.iter().chain(&w.b).all(|v| (v - 1.0).abs() < 1e-12));

    let joint = vec![vec![0.05, 0.10, 0.15], vec![0.20, 0.05, 0.10], vec![0.10, 0.15, 0.10]];
    let (p, q) = conditionals_of(&joint).unwrap();
    let w = check_factorization(&p, &q, &SupportSet::full(3, 3)).unwrap().unwrap();
    let px: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let pz: Vec<f64> = (0..3).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    // a b = pi_X / pi_Z up to one gauge constant.
    let c = w.a[0] * w.b[0] / (px[0] / pz[0]);
    for i in 0..3 {
        for j in 0..3 {
            assert!((w.a[i] * w.b[j] / (px[i] / pz[j]) - c).abs() < 1e-12);
        }
    }

    let mut t = p.entries().to_vec();
    t[0] += 0.1;
    let p2 = FiniteCond::normalized(3, 3, t).unwrap();
    assert!(check_factorization(&p2, &q, &SupportSet::full(3, 3)).unwrap().is_none());
}

#[test]
fn construct_joint_examples() {
    let joint = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
    let (p, q) = conditionals_of(&joint).unwrap();
    let s = SupportSet::full(2, 2);
    let w = check_factorization(&p, &q, &s).unwrap().unwrap();
    let j = construct_joint(&q, &s, &w).unwrap();
    assert!(j.max_abs_diff(&JointMatrix::from_rows(&joint).unwrap()) < 1e-12);

    // Dirac pair on the diagonal: the witness is constant and the joint
    // uniform on the diagonal.
    let id = FiniteCond::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    let diag = mask(&["100", "010", "001"]);
    let w = check_factorization(&id, &id, &diag).unwrap().unwrap();
    assert_eq!(w.a, vec![1.0; 3]);
    let j = construct_joint(&id, &diag, &w).unwrap();
    for i in 0..3 {
        assert!((j.get(i, i) - 1.0 / 3.0).abs() < 1e-15);
    }

    let single = mask(&["00", "01"]);
    let (p, q) = conditionals_of(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let w = check_factorization(&p, &q, &single).unwrap().unwrap();
    let j = construct_joint(&q, &single, &w).unwrap();
    assert_eq!(j.rows(), vec![vec![0.0, 0.0], vec![0.0, 1.0]]);
}

#[test]
fn determinacy_examples() {
    assert!(check_determinacy(&SupportSet::full(3, 4)));
    assert!(check_determinacy(&mask(&["000", "011", "011"])));
    assert!(!check_determinacy(&mask(&["100", "100", "111"])));
}

#[test]
fn dirac_examples() {
    let id = FiniteCond::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert_eq!(dirac_compatible(&[0, 1], &id), Some(0));
    let nu = FiniteCond::from_rows(&[vec![0.5, 0.2, 0.3], vec![0.5, 0.8, 0.7]]).unwrap();
    assert_eq!(dirac_compatible(&[2, 2], &nu), Some(2));
    let uniform = FiniteCond::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    assert_eq!(dirac_compatible(&[0, 1], &uniform), None);
}

#[test]
fn dirac_point_mass_is_compatible() {
    // x = f(z); nu(.|x0) concentrated on the preimage of x0. The joint
    // nu(z|x0) on {(x0, z)} has p = delta_{f(z)} and q = nu(.|x0).
    let f = [1usize, 0, 1];
    let nu = FiniteCond::from_rows(&[vec![0.2, 0.6], vec![0.8, 0.0], vec![0.0, 0.4]]).unwrap();
    let x0 = dirac_compatible(&f, &nu).unwrap();
    assert_eq!(x0, 1);
    let joint: Vec<Vec<f64>> = (0..2)
        .map(|i| (0..3).map(|j| if i == x0 { nu.get(j, x0) } else { 0.0 }).collect())
        .collect();
    let j = JointMatrix::from_rows(&joint).unwrap();
    let (pj, qj) = j.conditionals().unwrap();
    for z in 0..3 {
        if j.marginal_z()[z] > 0.0 {
            for x in 0..2 {
                assert_eq!(pj.get(x, z), f64::from(u8::from(f[z] == x)));
            }
        }
    }
    for z in 0..3 {
        assert!((qj.get(z, x0) - nu.get(z, x0)).abs() < 1e-15);
    }
}

#[test]
fn gibbs_oracle_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let joint = pairs::positive_joint(&mut rng, 3, 4);
    let (p, q) = conditionals_of(&joint).unwrap();
    let report = analyze(&p, &q).unwrap();
    for init in [vec![1.0, 0.0, 0.0], vec![0.2, 0.3, 0.5]] {
        let st = gibbs_stationary_oracle(&p, &q, &init).unwrap();
        assert!(st.max_abs_diff(&report.joints[0]) < 1e-9);
    }

    let (p, q) = conditionals_of(&two_block_joint()).unwrap();
    let st = gibbs_stationary_oracle(&p, &q, &[1.0, 0.0, 0.0, 0.0]).unwrap();
    let report = analyze(&p, &q).unwrap();
    assert!(st.max_abs_diff(&report.joints[0]) < 1e-9);

    let mut t = p.entries().to_vec();
    let full = pairs::positive_joint(&mut rng, 4, 4);
    let (p, q) = conditionals_of(&full).unwrap();
    t.copy_from_slice(p.entries());
    t[0] += 0.3;
    let p2 = FiniteCond::normalized(4, 4, t).unwrap();
    assert!(!analyze(&p2, &q).unwrap().compatible);
    let st = gibbs_stationary_oracle(&p2, &q, &[0.25; 4]).unwrap();
    let (_, chain_q) = st.conditionals().unwrap();
    let px = st.marginal_x();
    let tv: f64 = (0..4)
        .map(|i| px[i] * 0.5 * (0..4).map(|j| (chain_q.get(j, i) - q.get(j, i)).abs()).sum::<f64>())
        .sum();
    assert!(tv > 1e-3, "tv {tv}");
}

#[test]
fn periodic_chain_needs_lazy_oracle() {
    let swap = FiniteCond::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let id = FiniteCond::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert!(matches!(
        gibbs_stationary_oracle(&swap, &id, &[1.0, 0.0]),
        Err(FiniteError::NoConvergence(_))
    ));
    let st = gibbs_stationary_oracle_lazy(&swap, &id, &[1.0, 0.0]).unwrap();
    assert!((st.get(0, 1) - 0.5).abs() < 1e-12);
    assert!((st.get(1, 0) - 0.5).abs() < 1e-12);
}

#[test]
fn csv_round_trip() {
    let (p, q) = conditionals_of(&[vec![0.1, 0.2, 0.05], vec![0.3, 0.1, 0.25]]).unwrap();
    let mut buf = Vec::new();
    write_p_csv(&mut buf, &p).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("# rows=2 cols=3\n"));
    assert_eq!(read_p_csv(buf.as_slice()).unwrap(), p);
    let mut buf = Vec::new();
    write_q_csv(&mut buf, &q).unwrap();
    assert_eq!(read_q_csv(buf.as_slice()).unwrap(), q);
    assert!(read_p_csv("rows=2\n1,0\n".as_bytes()).is_err());
}

#[test]
fn report_json_uses_mask_strings() {
    let (p, q) = conditionals_of(&two_block_joint()).unwrap();
    let r = analyze(&p, &q).unwrap();
    let json = serde_json::to_value(ReportJson::from(&r)).unwrap();
    assert_eq!(json["complete_supports"][0], serde_json::json!(["1100", "1100", "0000", "0000"]));
    assert_eq!(json["compatible"], serde_json::json!(true));
}

#[test]
fn analyze_agrees_with_linear_feasibility() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for k in 0..200 {
        let case = pairs::random_case(&mut rng, 8, k % 2 == 0);
        let report = analyze(&case.p, &case.q).unwrap();
        assert_eq!(report.compatible, lp::is_compatible(&case.p, &case.q), "case {k}: {case:?}");
        if let (true, Some(src)) = (report.globally_determinate, &case.source) {
            let src = JointMatrix::from_rows(src).unwrap();
            assert!(report.joints[0].max_abs_diff(&src) < 1e-9, "case {k}");
        }
    }
}

#[test]
fn supports_and_joints_are_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let compatible = rng.random_bool(0.7);
        let case = pairs::random_case(&mut rng, 6, compatible);
        let (wpq, wqp) = candidate_sets(&case.p, &case.q).unwrap();
        let report = analyze(&case.p, &case.q).unwrap();
        for (s, j) in report.complete_supports.iter().zip(&report.joints) {
            assert!(is_complete_component(s, &wpq) && is_complete_component(s, &wqp));
            let (pj, qj) = j.conditionals().unwrap();
            let (mx, mz) = (j.marginal_x(), j.marginal_z());
            for i in 0..s.n_x() {
                for k in 0..s.n_z() {
                    if mz[k] > 0.0 {
                        assert!((pj.get(i, k) - case.p.get(i, k)).abs() < 1e-9);
                    }
                    if mx[i] > 0.0 {
                        assert!((qj.get(k, i) - case.q.get(k, i)).abs() < 1e-9);
                    }
                }
            }
            if check_determinacy(s) {
                // The chain started anywhere on the support ends at this joint.
                for _ in 0..10 {
                    let init: Vec<f64> = mx.iter().map(|&m| if m > 0.0 { rng.random_range(0.1..1.0) } else { 0.0 }).collect();
                    let st = gibbs_stationary_oracle_lazy(&case.p, &case.q, &init).unwrap();
                    assert!(st.max_abs_diff(j) < 1e-8);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positive_joint_round_trip(seed in any::<u64>(), nx in 1usize..=8, nz in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let joint = pairs::positive_joint(&mut rng, nx, nz);
        let (p, q) = conditionals_of(&joint).unwrap();
        let r = analyze(&p, &q).unwrap();
        prop_assert!(r.compatible && r.globally_determinate);
        prop_assert!(r.joints[0].max_abs_diff(&JointMatrix::from_rows(&joint).unwrap()) < 1e-9);
    }

    #[test]
    fn stretch_is_union_of_bands(rows in prop::collection::vec(prop::collection::vec(any::<bool>(), 4), 3)) {
        let s = SupportSet::from_fn(3, 4, |i, j| rows[i][j]);
        let st = stretch(&s);
        prop_assert!(s.is_subset(&st));
        prop_assert_eq!(stretch(&st), if s.is_empty() { st.clone() } else { stretch(&st) });
        let (px, pz) = (s.proj_x(), s.proj_z());
        for i in 0..3 {
            for j in 0..4 {
                prop_assert_eq!(st.get(i, j), px[i] || pz[j]);
            }
        }
    }
}
