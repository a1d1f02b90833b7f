use elastolab_dimenet::checkpoint::{decode, encode};
use elastolab_dimenet::loss::{mse, total_variation};
use elastolab_dimenet::tensor::{Scalar, Tensor};
use elastolab_dimenet::unet::{init_params, normalize_input, UNetConfig};
use proptest::prelude::*;

fn tensor(dims: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(dims, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mse_is_symmetric_and_zero_on_identity(a in prop::collection::vec(-10.0..10.0f64, 36), b in prop::collection::vec(-10.0..10.0f64, 36)) {
        let (ta, tb) = (tensor(vec![1, 1, 6, 6], a), tensor(vec![1, 1, 6, 6], b));
        let (ab, ba) = (mse(&ta, &tb).unwrap(), mse(&tb, &ta).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(mse(&ta, &ta).unwrap(), 0.0);
    }

    #[test]
    fn total_variation_ignores_offset(a in prop::collection::vec(-5.0..5.0f64, 2 * 25), shift in -5.0..5.0f64) {
        let base = tensor(vec![2, 1, 5, 5], a.clone());
        let moved = tensor(vec![2, 1, 5, 5], a.iter().map(|v| v + shift).collect());
        let (t0, t1) = (total_variation(&base, 1e-8).unwrap(), total_variation(&moved, 1e-8).unwrap());
        prop_assert!((t0 - t1).abs() <= 1e-9 * t0.max(1.0));
        prop_assert!(t0 >= 50.0 * 1e-4 * (1.0 - 1e-12));
    }

    #[test]
    fn gemm_matches_naive_product(
        m in 1usize..7, n in 1usize..7, k in 1usize..7,
        trans_a: bool, trans_b: bool,
        seed in prop::collection::vec(-1.0..1.0f64, 2 * 36 + 36),
        beta in -1.0..1.0f64,
    ) {
        let a = &seed[..m * k];
        let b = &seed[36..36 + k * n];
        let c0 = &seed[72..72 + m * n];
        let at = |i: usize, p: usize| if trans_a { a[p * m + i] } else { a[i * k + p] };
        let bt = |p: usize, j: usize| if trans_b { b[j * k + p] } else { b[p * n + j] };
        let mut c = c0.to_vec();
        f64::gemm(trans_a, trans_b, m, n, k, a, b, beta, &mut c);
        for i in 0..m {
            for j in 0..n {
                let expected = (0..k).map(|p| at(i, p) * bt(p, j)).sum::<f64>() + beta * c0[i * n + j];
                prop_assert!((c[i * n + j] - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn normalisation_is_scale_invariant(a in prop::collection::vec(-1.0..1.0f64, 2 * 16), scale in 0.01..100.0f64) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3));
        let x = tensor(vec![1, 2, 4, 4], a.clone());
        let y = tensor(vec![1, 2, 4, 4], a.iter().map(|v| v * scale).collect());
        let (nx, ny) = (normalize_input(&x).unwrap(), normalize_input(&y).unwrap());
        for (p, q) in nx.data().iter().zip(ny.data()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact(values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
        let cfg = UNetConfig { base_channels: 2, levels: 2, ..UNetConfig::default() };
        let mut params = init_params::<f32>(&cfg, 0).unwrap();
        for i in 0..params.len() {
            for (j, v) in params.by_index_mut(i).data_mut().iter_mut().enumerate() {
                *v = values[(i + j) % values.len()];
            }
        }
        let (cfg2, back) = decode(&encode(&cfg, &params).unwrap()).unwrap();
        prop_assert_eq!(cfg2, cfg);
        for i in 0..params.len() {
            prop_assert_eq!(back.name(i), params.name(i));
            let same = back.by_index(i).data().iter().zip(params.by_index(i).data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
