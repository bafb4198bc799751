use proptest::prelude::*;

use rsbnet::data::{split, split_sizes, NormalizationKind, Normalizer};
use rsbnet::evaluation::{ate_error, pehe, welch_t_test};
use rsbnet::losses::{ipm_loss, pcc_loss, IpmKind, SampleWeights};
use rsbnet::tensor::Matrix;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

fn treatments(n: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, n).prop_filter("both arms", |t| t.contains(&0) && t.contains(&1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn correlation_loss_is_bounded(rows in 2usize..12, m in 1usize..4, n in 1usize..5, seed in any::<u64>()) {
        let mut rng = rsbnet::rng::SeededRng::new(seed);
        let a = Matrix::from_fn(rows, m, |_, _| rng.normal(0.0, 2.0));
        let b = Matrix::from_fn(rows, n, |_, _| rng.normal(0.0, 2.0));
        let v = pcc_loss(&a, &b).unwrap().value;
        prop_assert!((0.0..=0.5).contains(&v), "{v}");
    }

    #[test]
    fn correlation_loss_ignores_affine_rescaling(
        a in matrix(10, 2),
        b in matrix(10, 3),
        scale in 0.5f64..4.0,
        shift in -5.0f64..5.0,
    ) {
        let base = pcc_loss(&a, &b).unwrap().value;
        let moved = pcc_loss(&a.map(|v| scale * v + shift), &b.map(|v| v / scale - shift)).unwrap().value;
        prop_assert!((base - moved).abs() < 1e-6, "{base} vs {moved}");
    }

    #[test]
    fn ipm_is_nonnegative_and_symmetric(phi in matrix(8, 3), t in treatments(8)) {
        for kind in [IpmKind::default(), IpmKind::LinearMmd] {
            let v = ipm_loss(&phi, &t, kind).unwrap().value;
            let flipped: Vec<u8> = t.iter().map(|&x| 1 - x).collect();
            let w = ipm_loss(&phi, &flipped, kind).unwrap().value;
            prop_assert!(v >= 0.0 && v.is_finite());
            prop_assert!((v - w).abs() <= 1e-12 * (1.0 + v.abs()), "{v} vs {w}");
        }
    }

    #[test]
    fn ate_error_never_exceeds_pehe(
        tau_hat in prop::collection::vec(-20.0f64..20.0, 1..40),
        seed in any::<u64>(),
    ) {
        let mut rng = rsbnet::rng::SeededRng::new(seed);
        let mu0: Vec<f64> = tau_hat.iter().map(|_| rng.normal(0.0, 3.0)).collect();
        let mu1: Vec<f64> = mu0.iter().map(|m| m + rng.normal(5.0, 2.0)).collect();
        let p = pehe(&tau_hat, &mu1, &mu0).unwrap();
        let a = ate_error(&tau_hat, &mu1, &mu0).unwrap();
        prop_assert!(a <= p + 1e-12, "{a} > {p}");
    }

    #[test]
    fn constant_offset_gives_pehe_of_offset(
        mu0 in prop::collection::vec(-5.0f64..5.0, 1..30),
        c in -4.0f64..4.0,
    ) {
        let mu1: Vec<f64> = mu0.iter().map(|m| m + 2.0).collect();
        let tau_hat = vec![2.0 + c; mu0.len()];
        prop_assert!((pehe(&tau_hat, &mu1, &mu0).unwrap() - c.abs()).abs() < 1e-12);
    }

    #[test]
    fn welch_is_antisymmetric(
        a in prop::collection::vec(-10.0f64..10.0, 2..20),
        b in prop::collection::vec(-10.0f64..10.0, 2..20),
    ) {
        if let (Ok(x), Ok(y)) = (welch_t_test(&a, &b, 0.05), welch_t_test(&b, &a, 0.05)) {
            prop_assert_eq!(x.t_stat, -y.t_stat);
            prop_assert!((x.p_value - y.p_value).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x.p_value));
        }
    }

    #[test]
    fn sample_weights_average_to_one(t in treatments(30)) {
        let w = SampleWeights::fit(&t).unwrap();
        let mean = w.w.iter().sum::<f64>() / t.len() as f64;
        prop_assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn splits_partition_rows(n in 10usize..400, seed in any::<u64>()) {
        let s = split(n, seed).unwrap();
        let (tr, va, te) = split_sizes(n);
        prop_assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (tr, va, te));
        let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn min_max_maps_training_range_to_unit_interval(x in matrix(6, 3)) {
        let norm = Normalizer::fit(&x, NormalizationKind::MinMax).unwrap();
        let out = norm.apply(&x).unwrap();
        for c in 0..3 {
            let col = out.column_values(c);
            prop_assert!(col.iter().all(|v| (0.0..=1.0).contains(v)));
            let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            if norm.scale[c] > 0.0 {
                prop_assert_eq!(lo, 0.0);
                prop_assert!((hi - 1.0).abs() < 1e-12);
            }
        }
    }
}
