use proptest::prelude::*;
use regradius::moduli::{coderivative_membership, min_coderivative_norm, rg_estimate};
use regradius::oracles::sigma_min;
use regradius::spaces::sphere_grid;
use regradius::{GraphPoint, MappingModel, Matrix, ScaleSchedule};

fn matrix(entries: &[f64]) -> Matrix {
    Matrix::from_rows(&[entries[0..2].to_vec(), entries[2..4].to_vec()]).unwrap()
}

fn origin() -> GraphPoint {
    GraphPoint::new(vec![0.0; 2], vec![0.0; 2])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn minimizer_passes_membership(e in prop::collection::vec(-1.0..1.0f64, 4), eps in 0.01..0.3f64, seed in 0u64..100) {
        let f = MappingModel::linear(matrix(&e));
        let s = f.sample_graph(&origin(), 0.2, 60, seed).unwrap();
        let dirs = sphere_grid(&f.range, 16, seed).unwrap();
        let pair = f.pair_spec();
        let r = min_coderivative_norm(&s, &origin(), eps, &dirs, 0.2, &pair, true).unwrap();
        if let Some(el) = r.element {
            prop_assert!(coderivative_membership(&s, &origin(), &el.y_star, &el.x_star, eps, 0.2, &pair).unwrap());
        }
    }

    #[test]
    fn larger_eps_never_increases_the_minimum(e in prop::collection::vec(-1.0..1.0f64, 4), eps in 0.01..0.2f64, seed in 0u64..100) {
        let f = MappingModel::linear(matrix(&e));
        let s = f.sample_graph(&origin(), 0.2, 60, seed).unwrap();
        let dirs = sphere_grid(&f.range, 16, seed).unwrap();
        let pair = f.pair_spec();
        let small = min_coderivative_norm(&s, &origin(), eps, &dirs, 0.2, &pair, false).unwrap().norm;
        let large = min_coderivative_norm(&s, &origin(), 2.0 * eps, &dirs, 0.2, &pair, false).unwrap().norm;
        prop_assert!(large <= small + 1e-6 * (1.0 + small), "{} > {}", large, small);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stabilized_rg_matches_sigma_min(e in prop::collection::vec(-1.0..1.0f64, 4), seed in 0u64..100) {
        let a = matrix(&e);
        let svd = sigma_min(&a).unwrap();
        prop_assume!(svd.sigma_min() > 0.05 && svd.sigma_max() / svd.sigma_min() < 20.0);
        let f = MappingModel::linear(a);
        let est = rg_estimate(&f, &origin(), &ScaleSchedule::geometric(0.25, 8, 80, seed)).unwrap();
        if est.stabilized {
            let s = svd.sigma_min();
            prop_assert!((est.value - s).abs() <= 0.1 * s, "{} vs {}", est.value, s);
        }
    }
}
