use proptest::prelude::*;
use regradius::moduli::rg_estimate;
use regradius::oracles::sigma_min;
use regradius::radius::{strong_regularity_localization_check, verify_destabilization, verify_interpolation};
use regradius::{GraphPoint, MappingModel, Matrix, ScaleSchedule};

fn origin() -> GraphPoint {
    GraphPoint::new(vec![0.0; 2], vec![0.0; 2])
}

fn schedule(seed: u64) -> ScaleSchedule {
    ScaleSchedule::geometric(0.25, 10, 100, seed)
}

fn matrix(e: &[f64]) -> Matrix {
    Matrix::from_rows(&[e[0..2].to_vec(), e[2..4].to_vec()]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn destabilizer_is_not_cheaper_than_rg(e in prop::collection::vec(-1.0..1.0f64, 4), seed in 0u64..50) {
        let a = matrix(&e);
        let svd = sigma_min(&a).unwrap();
        prop_assume!(svd.sigma_min() > 0.1 && svd.sigma_max() / svd.sigma_min() < 10.0);
        let f = MappingModel::linear(a);
        let sch = schedule(seed);
        let rep = verify_destabilization(&f, &origin(), &sch, 6).unwrap();
        let rg = rg_estimate(&f, &origin(), &sch).unwrap().value;
        prop_assert!(rep.lip_f >= 0.85 * rg, "lip {} rg {}", rep.lip_f, rg);
    }

    #[test]
    fn strong_regularity_gives_matching_destabilizer(e in prop::collection::vec(-1.0..1.0f64, 4), seed in 0u64..50) {
        let a = matrix(&e);
        let svd = sigma_min(&a).unwrap();
        prop_assume!(svd.sigma_min() > 0.1 && svd.sigma_max() / svd.sigma_min() < 10.0);
        let f = MappingModel::linear(a);
        let sch = schedule(seed);
        let rg = rg_estimate(&f, &origin(), &sch).unwrap();
        if strong_regularity_localization_check(&f, &origin(), 0.25, 16).unwrap() && rg.stabilized {
            let rep = verify_destabilization(&f, &origin(), &sch, 6).unwrap();
            prop_assert!((rep.lip_f - rg.value).abs() <= 0.15 * rg.value, "lip {} rg {}", rep.lip_f, rg.value);
        }
    }
}

#[test]
fn interpolation_is_monotone_in_r() {
    let f = MappingModel::linear(Matrix::diag(&[2.0, 0.5]));
    let sch = schedule(0);
    let vals: Vec<f64> = [0.0, 0.125, 0.25, 0.375, 0.5]
        .iter()
        .map(|&r| verify_interpolation(&f, &origin(), r, &sch, 6).unwrap().rg_perturbed.unwrap().value)
        .collect();
    for w in vals.windows(2) {
        assert!(w[0] >= w[1] - 0.05, "{vals:?}");
    }
}
