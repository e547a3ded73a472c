//! Cross-module invariants checked on random inputs.

use poissonize_core::distributions::{poisson_tail_threshold, poisson_upper_tail, truncated_poisson_tv};
use poissonize_core::hardness::quadrature::integrate;
use poissonize_core::ica::align_columns;
use poissonize_core::linalg::{khatri_rao_power, multilinear_kr_square, tensor_power_flat, FlatIndexMap};
use poissonize_core::smoothed::rv_check;
use poissonize_core::RealMatrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = RealMatrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| RealMatrix::from_row_slice(rows, cols, &v))
}

proptest! {
    #[test]
    fn khatri_rao_columns_are_tensor_powers(a in matrix(3, 4), ell in 1usize..4) {
        let kr = khatri_rao_power(&a, ell).unwrap();
        for j in 0..a.ncols() {
            let col: Vec<f64> = a.column(j).iter().copied().collect();
            let want = tensor_power_flat(&col, ell);
            for (x, y) in kr.column(j).iter().zip(&want) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn flat_positions_round_trip(n in 1usize..6, ell in 1usize..5, seed in any::<u64>()) {
        let map = FlatIndexMap::new(n, ell).unwrap();
        let pos = 1 + (seed as usize) % map.len();
        let tuple = map.tuple(pos).unwrap();
        prop_assert_eq!(map.position(&tuple).unwrap(), pos);
    }

    #[test]
    fn multilinear_rows_are_rows_of_the_square(a in matrix(4, 5)) {
        let full = khatri_rao_power(&a, 2).unwrap();
        let multi = multilinear_kr_square(&a).unwrap();
        let mut r = 0;
        for i in 0..4 {
            for j in (i + 1)..4 {
                prop_assert_eq!(multi.row(r), full.row(i * 4 + j));
                r += 1;
            }
        }
    }

    #[test]
    fn truncation_tv_decreases_with_threshold(lambda in 0.1f64..20.0, tau in 0u64..60) {
        let now = truncated_poisson_tv(lambda, tau);
        let next = truncated_poisson_tv(lambda, tau + 1);
        prop_assert!((0.0..=1.0).contains(&now));
        prop_assert!(next <= now);
    }

    #[test]
    fn tail_threshold_certifies_delta(lambda in 0.1f64..30.0, exponent in 1.0f64..14.0) {
        let delta = 10f64.powf(-exponent);
        let tau = poisson_tail_threshold(delta, lambda).unwrap();
        prop_assert!(poisson_upper_tail(tau, lambda) < delta);
        prop_assert!(tau as f64 > std::f64::consts::E * lambda);
    }

    #[test]
    fn column_distance_bound_on_tall_matrices(a in matrix(8, 5)) {
        prop_assert!(rv_check(&a).unwrap().holds);
    }

    #[test]
    fn alignment_undoes_permutation_and_sign(a in matrix(3, 4), shift in 0usize..4, flip in 0usize..4) {
        let truth = poissonize_core::linalg::normalize_columns(&a);
        let mut est = RealMatrix::zeros(3, 4);
        for j in 0..4 {
            let sign = if j == flip { -1.0 } else { 1.0 };
            est.set_column((j + shift) % 4, &(truth.column(j) * sign));
        }
        prop_assert!(align_columns(&est, &truth).unwrap().max_error <= 1e-12);
    }

    #[test]
    fn quadrature_integrates_polynomials(c in prop::collection::vec(-3.0f64..3.0, 6), b in 0.1f64..4.0) {
        let f = |x: f64| c.iter().rev().fold(0.0, |acc, &k| acc * x + k);
        let exact: f64 = c.iter().enumerate().map(|(k, &ck)| ck * b.powi(k as i32 + 1) / (k + 1) as f64).sum();
        let q = integrate(f, 0.0, b, 1e-13, 1e-13, 200);
        prop_assert!((q.value - exact).abs() <= 1e-10 * exact.abs().max(1.0));
    }
}
