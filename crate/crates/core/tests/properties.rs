//! Property tests over the numerical kernels and calibration helpers.

use dctnn_core::conformal::{class_quantile, cr_distance, LatentPoint};
use dctnn_core::linalg::spectral_norm;
use dctnn_core::tensor::{DenseTensor, Matrix};
use proptest::prelude::*;

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=6, 1..=4)
}

fn tensor_strategy() -> impl Strategy<Value = DenseTensor> {
    shape_strategy().prop_flat_map(|shape| {
        let len: usize = shape.iter().product();
        prop::collection::vec(-1.0f64..1.0, len)
            .prop_map(move |data| DenseTensor::from_vec(&shape, data))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_unfold_round_trip(t in tensor_strategy()) {
        for mode in 0..t.ndim() {
            let m = t.unfold(mode).unwrap();
            let back = DenseTensor::fold(&m, mode, t.shape()).unwrap();
            prop_assert_eq!(&back, &t);
        }
    }

    #[test]
    fn unfold_preserves_frobenius_norm(t in tensor_strategy()) {
        for mode in 0..t.ndim() {
            let m = t.unfold(mode).unwrap();
            prop_assert!((m.frobenius_norm() - t.frobenius_norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_product_commutes_across_modes(
        data in prop::collection::vec(-1.0f64..1.0, 3 * 4 * 5),
        a_data in prop::collection::vec(-1.0f64..1.0, 2 * 3),
        b_data in prop::collection::vec(-1.0f64..1.0, 6 * 4),
    ) {
        let t = DenseTensor::from_vec(&[3, 4, 5], data);
        let a = Matrix::from_vec(2, 3, a_data);
        let b = Matrix::from_vec(6, 4, b_data);
        let ab = t.mode_product(&a, 0).unwrap().mode_product(&b, 1).unwrap();
        let ba = t.mode_product(&b, 1).unwrap().mode_product(&a, 0).unwrap();
        let diff = ab.sub(&ba).unwrap();
        let max_abs = diff.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(max_abs <= 1e-12);
    }

    #[test]
    fn mode_product_respects_spectral_norm(
        data in prop::collection::vec(-1.0f64..1.0, 4 * 3 * 2),
        a_data in prop::collection::vec(-1.0f64..1.0, 5 * 4),
    ) {
        let t = DenseTensor::from_vec(&[4, 3, 2], data);
        let a = Matrix::from_vec(5, 4, a_data);
        let product = t.mode_product(&a, 0).unwrap();
        // Largest singular value via the power-iteration oracle.
        let sigma = spectral_norm(&a, 300);
        prop_assert!(
            product.frobenius_norm() <= sigma * t.frobenius_norm() + 1e-9,
            "||t x A|| = {}, sigma * ||t|| = {}",
            product.frobenius_norm(),
            sigma * t.frobenius_norm()
        );
    }

    #[test]
    fn quantiles_are_order_statistics(
        mut scores in prop::collection::vec(-10.0f64..10.0, 1..40),
        gamma in 0.0f64..=1.0,
    ) {
        let q = class_quantile(&scores, gamma, false).unwrap();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert!(q >= scores[0] && q <= scores[scores.len() - 1]);
        prop_assert!(scores.contains(&q));
    }

    #[test]
    fn quantiles_are_monotone_in_gamma(
        scores in prop::collection::vec(-10.0f64..10.0, 1..40),
        g1 in 0.0f64..=1.0,
        g2 in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let q_lo = class_quantile(&scores, lo, false).unwrap();
        let q_hi = class_quantile(&scores, hi, false).unwrap();
        prop_assert!(q_lo <= q_hi);
    }

    #[test]
    fn cr_distance_is_a_metric(
        cores in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 3..=3),
        refs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 3..=3),
        omega in 0.1f64..20.0,
    ) {
        let mk = |c: &Vec<f64>, r: &Vec<f64>| LatentPoint {
            core: DenseTensor::from_vec(&[4], c.clone()),
            refinement: DenseTensor::from_vec(&[2], r.clone()),
            prob: 0.5,
            label: 0,
            smoothed: None,
        };
        let a = mk(&cores[0], &refs[0]);
        let b = mk(&cores[1], &refs[1]);
        let c = mk(&cores[2], &refs[2]);
        let dab = cr_distance(&a, &b, omega).unwrap();
        let dba = cr_distance(&b, &a, omega).unwrap();
        let dac = cr_distance(&a, &c, omega).unwrap();
        let dcb = cr_distance(&c, &b, omega).unwrap();
        prop_assert!(dab >= 0.0);
        prop_assert_eq!(dab, dba);
        prop_assert!(dab <= dac + dcb + 1e-12);
        prop_assert_eq!(cr_distance(&a, &a, omega).unwrap(), 0.0);
    }
}
