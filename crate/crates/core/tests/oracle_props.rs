use proptest::prelude::*;
use regradius::oracles::{lambda_min_gram, sigma_min};
use regradius::Matrix;

proptest! {
    #[test]
    fn jacobi_and_inertia_bisection_agree(n in 1usize..5, entries in prop::collection::vec(-1.0..1.0f64, 16)) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| entries[i * 4..i * 4 + n].to_vec()).collect();
        let a = Matrix::from_rows(&rows).unwrap();
        let s = sigma_min(&a).unwrap().sigma_min();
        let l = lambda_min_gram(&a);
        prop_assume!(s > 1e-6);
        prop_assert!((s - l.sqrt()).abs() <= 1e-8 * s, "{} vs {}", s, l.sqrt());
    }
}
