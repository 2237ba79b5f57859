use std::sync::OnceLock;

use proptest::prelude::*;
use regradius::perturbation::{build_perturbation, coderivative_transfer_check, perturbation_eval, select_radii, Construction};
use regradius::{linalg, GraphPoint, MappingModel, Matrix, ScaleSchedule};

fn diag() -> MappingModel {
    MappingModel::linear(Matrix::diag(&[2.0, 0.5]))
}

fn construction() -> &'static Construction {
    static C: OnceLock<Construction> = OnceLock::new();
    C.get_or_init(|| {
        let base = GraphPoint::new(vec![0.0; 2], vec![0.0; 2]);
        build_perturbation(&diag(), &base, &ScaleSchedule::default(), 8).unwrap()
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    linalg::euclid(&linalg::sub(a, b))
}

/// A point near bump `k`, at relative radius `r` (may lie outside the ball).
fn near(c: &Construction, k: usize, angle: f64, r: f64) -> Vec<f64> {
    let b = &c.perturbation.bumps[k];
    vec![b.center[0] + r * b.radius * angle.cos(), b.center[1] + r * b.radius * angle.sin()]
}

#[test]
fn supports_are_disjoint_and_shells_separated() {
    let c = construction();
    let p = &c.perturbation;
    let t = p.t();
    assert!(p.bumps.len() >= 3);
    for i in 0..p.bumps.len() {
        for k in i + 1..p.bumps.len() {
            let (bi, bk) = (&p.bumps[i], &p.bumps[k]);
            assert!(dist(&bi.center, &bk.center) > bi.radius + bk.radius);
            assert!(t[i] > t[k] + bk.radius + bi.radius, "shells {i} {k}");
        }
    }
}

#[test]
fn transfer_of_coderivative_elements() {
    for alpha in [0.5, 1.0] {
        let ok = coderivative_transfer_check(&diag(), construction(), alpha, 3).unwrap();
        assert!(!ok.is_empty());
        assert!(ok.iter().all(|&b| b), "α = {alpha}: {ok:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn per_bump_lipschitz(k in 0usize..3, a1 in 0.0..6.3f64, r1 in 0.0..1.0f64, a2 in 0.0..6.3f64, r2 in 0.0..1.0f64) {
        let c = construction();
        let p = &c.perturbation;
        let k = k % p.bumps.len();
        let b = &p.bumps[k];
        let (u, w) = (near(c, k, a1, r1), near(c, k, a2, r2));
        let d = dist(&u, &w);
        prop_assume!(d > 0.0);
        let lk = (1.0 + 1.0 / b.label() as f64) * linalg::euclid(&b.slope);
        prop_assert!(dist(&p.bump_part(k, &u), &p.bump_part(k, &w)) <= lk * d * (1.0 + 1e-8));
    }

    #[test]
    fn global_lipschitz_by_gamma(k1 in 0usize..8, k2 in 0usize..8, a1 in 0.0..6.3f64, r1 in 0.0..1.6f64, a2 in 0.0..6.3f64, r2 in 0.0..1.6f64) {
        let c = construction();
        let n = c.perturbation.bumps.len();
        let (u, w) = (near(c, k1 % n, a1, r1), near(c, k2 % n, a2, r2));
        let d = dist(&u, &w);
        prop_assume!(d > 0.0);
        let diff = dist(&perturbation_eval(&c.perturbation, &u), &perturbation_eval(&c.perturbation, &w));
        prop_assert!(diff <= c.gamma() * d * (1.0 + 1e-8), "{} > {}", diff / d, c.gamma());
    }

    #[test]
    fn decays_toward_the_sphere(k in 0usize..8, a in 0.0..6.3f64, r in 0.0..0.999f64) {
        let c = construction();
        let p = &c.perturbation;
        let k = k % p.bumps.len();
        let b = &p.bumps[k];
        let x = near(c, k, a, r);
        let gap = b.radius - dist(&x, &b.center);
        prop_assume!(gap > 0.0);
        prop_assert!(linalg::euclid(&p.bump_part(k, &x)) < c.gamma() * gap);
    }

    #[test]
    fn selected_radii_halve_and_fit(raw in prop::collection::vec(0.001..1.0f64, 3..12)) {
        let mut t = raw.clone();
        t.sort_by(|a, b| b.total_cmp(a));
        t.dedup();
        prop_assume!(t.len() >= 3);
        let norms = vec![1.0; t.len()];
        let eps = vec![0.01; t.len()];
        if let Ok(s) = select_radii(&t, &norms, &eps) {
            for w in s.t.windows(2) {
                prop_assert!(w[1] < w[0] / 2.0);
            }
            for (i, &ti) in s.t.iter().enumerate() {
                prop_assert!(s.rho[i] > 0.0);
                for (k, &tk) in s.t.iter().enumerate().skip(i + 1) {
                    prop_assert!(ti > tk + s.rho[k] + s.rho[i]);
                }
            }
        }
    }
}
