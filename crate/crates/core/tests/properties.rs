use isomerge_core::isot::{from_bytes, to_bytes};
use isomerge_core::{
    effective_rank, interpolate_spectrum, merge_iso_c, merge_iso_cts, project_onto_topk, sar,
    thin_svd, whiten_columns, Matrix, TaskMatrixSet, Tensor, TensorBundle,
};
use proptest::prelude::*;

fn matrix(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(m, n)| {
        prop::collection::vec(-1.0f64..1.0, m * n).prop_map(move |v| Matrix::from_vec(m, n, v))
    })
}

/// `t` same-shape task matrices for layer `w`.
fn tasks(max_dim: usize, max_tasks: usize) -> impl Strategy<Value = Vec<TaskMatrixSet>> {
    (1..=max_dim, 1..=max_dim, 1..=max_tasks).prop_flat_map(|(m, n, t)| {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, m * n), t).prop_map(move |all| {
            all.into_iter()
                .enumerate()
                .map(|(i, v)| {
                    let mut set = TaskMatrixSet::new(format!("t{i}"));
                    set.matrices.insert("w".into(), Matrix::from_vec(m, n, v));
                    set.vectors.insert("b".into(), vec![i as f64; 2]);
                    set
                })
                .collect()
        })
    })
}

fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn tensor() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..5, 1..=2).prop_flat_map(|shape| {
        let len: usize = shape.iter().product();
        prop::collection::vec(-1e6f32..1e6, len)
            .prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
    })
}

fn bundle() -> impl Strategy<Value = TensorBundle> {
    (
        prop::collection::btree_map("[a-z][a-z0-9_.]{0,12}", tensor(), 0..6),
        prop::collection::btree_map("[a-z]{1,6}", "[ -~]{0,10}", 0..3),
    )
        .prop_map(|(tensors, meta)| {
            let mut b = TensorBundle::new();
            for (name, t) in tensors {
                b.insert(name, t).unwrap();
            }
            for (k, v) in meta {
                b = b.with_meta(k, v);
            }
            b
        })
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 128,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn isot_round_trip_preserves_bits(b in bundle()) {
        let bytes = to_bytes(&b).unwrap();
        let back = from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &b);
        prop_assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn projection_is_idempotent(m in matrix(1..=8, 1..=8), frac in 0.0f64..=1.0) {
        let f = thin_svd(&m).unwrap();
        let k = 1 + (frac * (f.rank() - 1) as f64).round() as usize;
        let once = project_onto_topk(&m, &f, k).unwrap();
        let twice = project_onto_topk(&once, &f, k).unwrap();
        prop_assert!((&twice - &once).norm() <= 1e-10 * m.norm().max(1.0));
    }

    #[test]
    fn svd_is_invariant_under_negation(m in matrix(1..=8, 1..=8)) {
        let f = thin_svd(&m).unwrap();
        let g = thin_svd(&(-&m)).unwrap();
        for (a, b) in f.sigma.iter().zip(&g.sigma) {
            prop_assert!((a - b).abs() <= 1e-10 * f.sigma[0].max(1.0));
        }
        prop_assert!(f.sigma.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!((f.recompose() - &m).norm() <= 1e-10 * m.norm().max(1.0));
    }

    #[test]
    fn effective_rank_shrinks_with_tolerance(m in matrix(1..=8, 1..=8), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        prop_assume!(m.norm() > 1e-6);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(effective_rank(&m, hi).unwrap() <= effective_rank(&m, lo).unwrap());
    }

    #[test]
    fn whitening_is_orthonormal_and_nearest(a in matrix(4..=8, 1..=4), q0 in matrix(8..=8, 4..=4)) {
        prop_assume!(thin_svd(&a).unwrap().sigma.last().copied().unwrap_or(0.0) > 1e-6);
        let w = whiten_columns(&a).unwrap();
        let n = a.ncols();
        prop_assert!((w.transpose() * &w - Matrix::identity(n, n)).amax() <= 1e-8);
        // any other orthonormal frame of the same shape is at least as far away
        let q = q0.rows(0, a.nrows()).columns(0, n).into_owned().qr().q();
        prop_assert!((&a - &w).norm() <= (&a - &q).norm() + 1e-9);
    }

    #[test]
    fn iso_c_spectrum_is_flat(ts in tasks(8, 4)) {
        let out = merge_iso_c(&ts).unwrap();
        let meta = &out.per_layer_meta["w"];
        prop_assume!(!meta.zero_sum);
        let sigma_bar = meta.sigma_bar.unwrap();
        for s in thin_svd(&out.deltas.matrices["w"]).unwrap().sigma {
            prop_assert!((s - sigma_bar).abs() <= 1e-6 * sigma_bar);
        }
    }

    #[test]
    fn iso_c_ignores_task_order(ts in tasks(8, 5)) {
        let fwd = merge_iso_c(&ts).unwrap();
        let mut rev = ts.clone();
        rev.reverse();
        let back = merge_iso_c(&rev).unwrap();
        let (x, y) = (&fwd.deltas.matrices["w"], &back.deltas.matrices["w"]);
        prop_assert!((x - y).norm() <= 1e-9 * y.norm().max(1.0));
        prop_assert_eq!(&fwd.deltas.vectors["b"], &back.deltas.vectors["b"]);
    }

    #[test]
    fn iso_merges_are_positively_homogeneous(ts in tasks(6, 4), c in 0.01f64..100.0) {
        let scaled: Vec<TaskMatrixSet> = ts.iter().map(|t| t.scaled(c)).collect();
        for (a, b) in [
            (merge_iso_c(&ts).unwrap(), merge_iso_c(&scaled).unwrap()),
            (merge_iso_cts(&ts, 0.5).unwrap(), merge_iso_cts(&scaled, 0.5).unwrap()),
        ] {
            let want = &a.deltas.matrices["w"] * c;
            prop_assert!((&b.deltas.matrices["w"] - &want).norm() <= 1e-8 * want.norm().max(1e-12));
        }
    }

    #[test]
    fn sar_ignores_source_scale(src in matrix(6..=6, 5..=5), trg in matrix(6..=6, 5..=5), c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0], k in 1usize..=5) {
        let base = sar(&src, &trg, k).unwrap();
        prop_assert!((sar(&(&src * c), &trg, k).unwrap() - base).abs() <= 1e-10);
        prop_assert!((sar(&src, &(&trg * c), k).unwrap() - base).abs() <= 1e-10);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&base));
    }

    #[test]
    fn sar_grows_with_k(src in matrix(6..=6, 5..=5), trg in matrix(6..=6, 5..=5)) {
        let values: Vec<f64> = (1..=5).map(|k| sar(&src, &trg, k).unwrap()).collect();
        prop_assert!(values.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        prop_assert!(values[4] <= 1.0);
    }

    #[test]
    fn interpolation_is_affine_in_beta(m in matrix(1..=8, 1..=8), beta in 0.0f64..=1.0) {
        let lo = interpolate_spectrum(&m, 0.0).unwrap();
        let hi = interpolate_spectrum(&m, 1.0).unwrap();
        let mid = interpolate_spectrum(&m, beta).unwrap();
        let want = &lo * (1.0 - beta) + &hi * beta;
        prop_assert!((&mid - &want).norm() <= 1e-10 * m.norm().max(1.0));
        prop_assert!(rel_diff(&lo, &m) <= 1e-10 || m.norm() < 1e-12);
    }
}
