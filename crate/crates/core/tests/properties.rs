use exsplinet::training::{adam_step, empirical_risk};
use exsplinet::*;
use proptest::prelude::*;

fn degree_and_count() -> impl Strategy<Value = (usize, usize)> {
    (0usize..=5).prop_flat_map(|p| (Just(p), p + 1..=50))
}

fn small_config() -> impl Strategy<Value = ModelConfig> {
    (1usize..=3, 1usize..=2, 1usize..=3, 1usize..=3).prop_flat_map(|(d, o, t, l)| {
        (
            proptest::collection::vec((0usize..=3).prop_flat_map(|p| (Just(p), p + 1..=p + 4)), l),
            proptest::collection::vec((0usize..=3).prop_flat_map(|q| (Just(q), q + 1..=q + 3)), l),
        )
            .prop_map(move |(inner, outer)| ModelConfig {
                inputs: d,
                outputs: o,
                trees: t,
                inner_counts: inner.iter().map(|x| x.1).collect(),
                inner_degrees: inner.iter().map(|x| x.0).collect(),
                outer_counts: outer.iter().map(|x| x.1).collect(),
                outer_degrees: outer.iter().map(|x| x.0).collect(),
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn partition_of_unity_and_nonnegativity((p, n) in degree_and_count(), x in 0.0f64..=1.0) {
        let kv = open_uniform_knots(n, p).unwrap();
        let b = basis_dense(&kv, x).unwrap();
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(b.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn sparse_matches_oracle_inside_window((p, n) in degree_and_count(), x in 0.0f64..=1.0) {
        let kv = open_uniform_knots(n, p).unwrap();
        let s = basis_sparse(n, p, x).unwrap();
        prop_assert_eq!(s.values.len(), p + 1);
        prop_assert!(s.offset >= 1 && s.offset + p <= n);
        for i in 1..=n {
            let o = basis_oracle(&kv, i, x).unwrap();
            prop_assert!((s.get(i) - o).abs() <= 1e-12, "n = {}: {} vs {}", i, s.get(i), o);
        }
        if p >= 1 {
            let (lo, hi) = support_window(n, p, x).unwrap();
            for i in 1..=n {
                if i < lo || i > hi {
                    prop_assert_eq!(basis_oracle(&kv, i, x).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn de_boor_matches_dense_dot(
        (p, n) in degree_and_count(),
        x in 0.0f64..=1.0,
        seed in proptest::collection::vec(-5.0f64..5.0, 50),
    ) {
        let kv = open_uniform_knots(n, p).unwrap();
        let w = seed[..n].to_vec();
        let dense = basis_dense(&kv, x).unwrap();
        let dot: f64 = w.iter().zip(&dense).map(|(a, b)| a * b).sum();
        let s = Spline1D::new(kv, w).unwrap();
        prop_assert!((de_boor_eval(&s, x).unwrap() - dot).abs() <= 1e-12 * (1.0 + dot.abs()) * 10.0);
    }

    #[test]
    fn greville_reproduces_identity((p, n) in (1usize..=5).prop_flat_map(|p| (Just(p), p + 1..=40)), x in 0.0f64..=1.0) {
        let s = Spline1D::new(open_uniform_knots(n, p).unwrap(), greville(n, p).unwrap()).unwrap();
        prop_assert!((de_boor_eval(&s, x).unwrap() - x).abs() <= 1e-12);
    }

    #[test]
    fn left_continuity_at_one((p, n) in degree_and_count()) {
        let kv = open_uniform_knots(n, p).unwrap();
        let at = basis_dense(&kv, 1.0).unwrap();
        let below = basis_dense(&kv, 1.0 - 1e-12).unwrap();
        for (a, b) in at.iter().zip(&below) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        prop_assert_eq!(at[n - 1], 1.0);
    }

    #[test]
    fn derivative_spline_matches_differences(
        (p, n) in (2usize..=5).prop_flat_map(|p| (Just(p), p + 1..=20)),
        x in 0.01f64..0.99,
        w in proptest::collection::vec(-2.0f64..2.0, 20),
    ) {
        let kv = open_uniform_knots(n, p).unwrap();
        // stay clear of knots where the derivative of degree 2 has kinks
        let h = 1e-5;
        let step = 1.0 / (n - p) as f64;
        let r = (x / step).fract();
        prop_assume!(r > 1e-3 && r < 1.0 - 1e-3);
        let s = Spline1D::new(kv, w[..n].to_vec()).unwrap();
        let d = derivative_spline(&s).unwrap();
        let fd = (de_boor_eval(&s, x + h).unwrap() - de_boor_eval(&s, x - h).unwrap()) / (2.0 * h);
        let a = de_boor_eval(&d, x).unwrap();
        prop_assert!((a - fd).abs() <= 1e-5 * a.abs().max(1.0), "{} vs {}", a, fd);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tensor_sparse_equals_dense(
        shape in proptest::collection::vec((0usize..=3).prop_flat_map(|q| (Just(q), q + 1..=5)), 1..=3),
        y in proptest::collection::vec(0.0f64..=1.0, 3),
        w in proptest::collection::vec(-1.0f64..1.0, 125),
    ) {
        let counts: Vec<usize> = shape.iter().map(|s| s.1).collect();
        let degrees: Vec<usize> = shape.iter().map(|s| s.0).collect();
        let y = &y[..counts.len()];
        let b = tensor_basis(&counts, &degrees, y).unwrap();
        let dense = b.to_dense();
        // brute-force Kronecker product of dense factors, axis 1 slowest
        let mut kron = vec![1.0];
        for (l, (&m, &q)) in counts.iter().zip(&degrees).enumerate() {
            let f = basis_dense(&open_uniform_knots(m, q).unwrap(), y[l]).unwrap();
            kron = kron.iter().flat_map(|a| f.iter().map(move |b| a * b)).collect();
        }
        prop_assert_eq!(dense.len(), kron.len());
        for (a, b) in dense.iter().zip(&kron) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert!((dense.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        let size = kron.len();
        let wt = WeightTensor::new(counts.clone(), w[..size].to_vec()).unwrap();
        let dot: f64 = wt.values().iter().zip(&kron).map(|(a, b)| a * b).sum();
        prop_assert!((tensor_dot(&wt, &b).unwrap() - dot).abs() <= 1e-12);
    }

    #[test]
    fn mixed_partials_commute(
        q in proptest::collection::vec(1usize..=3, 2),
        extra in proptest::collection::vec(1usize..=3, 2),
        w in proptest::collection::vec(-1.0f64..1.0, 36),
    ) {
        let counts: Vec<usize> = q.iter().zip(&extra).map(|(a, b)| a + b).collect();
        let wt = WeightTensor::new(counts.clone(), w[..counts[0] * counts[1]].to_vec()).unwrap();
        let (a, ac, ad) = axis_derivative_weights(&wt, &q, &counts, 0).unwrap();
        let (ab, _, _) = axis_derivative_weights(&a, &ad, &ac, 1).unwrap();
        let (b, bc, bd) = axis_derivative_weights(&wt, &q, &counts, 1).unwrap();
        let (ba, _, _) = axis_derivative_weights(&b, &bd, &bc, 0).unwrap();
        prop_assert_eq!(ab.shape(), ba.shape());
        for (x, y) in ab.values().iter().zip(ba.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0) * 100.0);
        }
    }

    #[test]
    fn inner_features_stay_in_unit_interval(
        cfg in small_config(),
        seed in any::<u64>(),
        x in proptest::collection::vec(0.0f64..=1.0, 3),
    ) {
        let m = ExSpliNet::init_random(cfg.clone(), seed).unwrap();
        let x = &x[..cfg.inputs];
        for t in 0..cfg.trees {
            for l in 0..cfg.levels() {
                let y = m.inner_feature(t, l, x).unwrap();
                prop_assert!((0.0..=1.0 + 1e-12).contains(&y), "{}", y);
            }
        }
    }

    #[test]
    fn reparam_is_scale_invariant(u in proptest::collection::vec(-3.0f64..3.0, 1..20), c in 0.1f64..10.0) {
        prop_assume!(u.iter().any(|v| v.abs() > 1e-3));
        let v = reparam(&u).unwrap();
        let scaled: Vec<f64> = u.iter().map(|x| -c * x).collect();
        let w = reparam(&scaled).unwrap();
        prop_assert!(v.iter().all(|x| *x >= 0.0));
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (a, b) in v.iter().zip(&w) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn reconstruction_identity(
        cfg in small_config(),
        seed in any::<u64>(),
        x in proptest::collection::vec(0.0f64..=1.0, 3),
    ) {
        let m = ExSpliNet::init_random(cfg.clone(), seed).unwrap();
        let x = &x[..cfg.inputs];
        let f = m.forward(x).unwrap();
        for o in 0..cfg.outputs {
            let s: f64 = (0..cfg.trees)
                .map(|t| interpret::reconstruct(&m, o, t, x).unwrap())
                .sum();
            prop_assert!((s - f[o]).abs() <= 1e-10);
        }
        for t in 0..cfg.trees {
            let j = joint_distribution(&m, t, x).unwrap();
            prop_assert!((j.values().iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn adam_keeps_blocks_on_the_simplex(seed in any::<u64>(), lr in 1e-4f64..0.5) {
        let cfg = ModelConfig::uniform(3, 2, 2, 2, 4, 3, 2, 2);
        let mut m = ExSpliNet::init_random(cfg.clone(), seed).unwrap();
        let mut adam = Adam::new(m.param_count(), lr);
        for k in 0..5 {
            let g: Vec<f64> = (0..m.param_count()).map(|i| ((i * 7 + k) % 11) as f64 - 5.0).collect();
            adam_step(&mut m, &mut adam, &g).unwrap();
            for t in 0..cfg.trees {
                for l in 0..cfg.levels() {
                    let mut s = 0.0;
                    for d in 0..cfg.inputs {
                        prop_assert!(m.v(t, l, d).iter().all(|v| *v >= 0.0));
                        s += m.v(t, l, d).iter().sum::<f64>();
                    }
                    prop_assert!((s - 1.0).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn minmax_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, 3), 2..20)) {
        prop_assume!((0..3).all(|d| {
            let col: Vec<f64> = rows.iter().map(|r| r[d]).collect();
            col.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - col.iter().cloned().fold(f64::INFINITY, f64::min) > 1e-6
        }));
        let flat: Vec<f64> = rows.concat();
        let n = rows.len();
        let ds = Dataset::new(flat.clone(), 3, Targets::Values { outputs: 1, values: vec![0.0; n] }).unwrap();
        let (norm, mm) = dataio::normalize_minmax(&ds).unwrap();
        prop_assert!(norm.inputs().iter().all(|v| (0.0..=1.0).contains(v)));
        let mut back = norm.inputs().to_vec();
        for row in back.chunks_mut(3) {
            mm.inverse(row);
        }
        for (a, b) in back.iter().zip(&flat) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0) * 100.0);
        }
    }
}

#[test]
fn tiny_step_decreases_risk_in_most_seeds() {
    let mut failures = 0;
    for seed in 0..20u64 {
        let cfg = ModelConfig::uniform(2, 1, 2, 2, 4, 4, 2, 2);
        let mut m = ExSpliNet::init_random(cfg, seed).unwrap();
        let xs: Vec<f64> = (0..40).map(|i| ((i * 37 + seed as usize * 11) % 97) as f64 / 96.0).collect();
        let ys: Vec<f64> = xs.chunks(2).map(|p| (3.0 * p[0]).sin() + p[1] * p[1]).collect();
        let data = Dataset::new(xs, 2, Targets::Values { outputs: 1, values: ys }).unwrap();
        let before = empirical_risk(&m, &data, Loss::Squared).unwrap();
        let g = risk_grad(&m, &data, Loss::Squared).unwrap();
        let lr = 1e-4;
        m.update_params(|p| {
            for (pi, gi) in p.iter_mut().zip(g.values()) {
                *pi -= lr * gi;
            }
        })
        .unwrap();
        let after = empirical_risk(&m, &data, Loss::Squared).unwrap();
        if after >= before {
            failures += 1;
        }
    }
    assert!(failures <= 2, "{failures} seeds did not decrease");
}
