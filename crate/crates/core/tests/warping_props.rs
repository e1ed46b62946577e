use proptest::prelude::*;
use warpnet::warping::{
    brute_force_dtw, dtw, dtw_with_path, pairwise_matrix, soft_dtw, DtwParams, ElementwiseMode, SoftDtwParams,
};

fn series(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 1..=max_len)
}

proptest! {
    #[test]
    fn dp_matches_enumeration(a in series(6), b in series(6), radius in prop::option::of(0usize..4)) {
        let p = DtwParams { band_radius: radius, ..DtwParams::default() };
        let x = pairwise_matrix(&a, &b, ElementwiseMode::Abs).unwrap();
        match brute_force_dtw(&a, &b, &p) {
            Ok(expect) => prop_assert!((dtw(&x, &p).unwrap() - expect).abs() <= 1e-9),
            Err(_) => prop_assert!(dtw(&x, &p).is_err()),
        }
    }

    #[test]
    fn dtw_is_symmetric_and_zero_on_self(a in series(20), b in series(20)) {
        let p = DtwParams::default();
        let ab = dtw(&pairwise_matrix(&a, &b, ElementwiseMode::Abs).unwrap(), &p).unwrap();
        let ba = dtw(&pairwise_matrix(&b, &a, ElementwiseMode::Abs).unwrap(), &p).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert_eq!(dtw(&pairwise_matrix(&a, &a, ElementwiseMode::Abs).unwrap(), &p).unwrap(), 0.0);
    }

    #[test]
    fn radius_zero_is_the_diagonal(pair in (1usize..40).prop_flat_map(|n| (prop::collection::vec(-3.0f64..3.0, n), prop::collection::vec(-3.0f64..3.0, n)))) {
        let x = pairwise_matrix(&pair.0, &pair.1, ElementwiseMode::Abs).unwrap();
        prop_assert!((dtw(&x, &DtwParams::banded(0)).unwrap() - x.diagonal_sum()).abs() <= 1e-9);
    }

    #[test]
    fn narrower_bands_never_cost_less(a in series(16), b in series(16), r in 0usize..6) {
        let x = pairwise_matrix(&a, &b, ElementwiseMode::Abs).unwrap();
        let (Ok(narrow), Ok(wide)) = (dtw(&x, &DtwParams::banded(r)), dtw(&x, &DtwParams::banded(r + 1))) else {
            return Ok(());
        };
        prop_assert!(wide <= narrow + 1e-12);
        prop_assert!(dtw(&x, &DtwParams::unconstrained()).unwrap() <= wide + 1e-12);
    }

    #[test]
    fn returned_path_is_valid_and_optimal(a in series(24), b in series(24)) {
        let x = pairwise_matrix(&a, &b, ElementwiseMode::Abs).unwrap();
        let (d, path) = dtw_with_path(&x, &DtwParams::unconstrained()).unwrap();
        prop_assert!(path.validate(a.len(), b.len()).is_ok());
        prop_assert!((path.cost(&x) - d).abs() <= 1e-9);
    }

    #[test]
    fn soft_dtw_is_a_lower_bound(a in series(16), b in series(16), gamma in 1e-3f64..2.0) {
        let x = pairwise_matrix(&a, &b, ElementwiseMode::Abs).unwrap();
        let hard = dtw(&x, &DtwParams::unconstrained()).unwrap();
        prop_assert!(soft_dtw(&x, &SoftDtwParams::new(gamma)).unwrap() <= hard + 1e-12);
    }
}
