use proptest::prelude::*;
use regradius::linalg::dot;
use regradius::{NormKind, NormSpec, ProductNormSpec};

fn kind() -> impl Strategy<Value = NormKind> {
    prop_oneof![Just(NormKind::One), Just(NormKind::Two), Just(NormKind::Inf)]
}

fn vecs(n: usize, count: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0..10.0f64, n), count)
}

proptest! {
    #[test]
    fn triangle_and_homogeneity(p in kind(), n in 1usize..5, seed in vecs(4, 3), t in -5.0..5.0f64) {
        let s = NormSpec::new(n, p);
        let (a, b) = (&seed[0][..n], &seed[1][..n]);
        let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
        prop_assert!(s.n(&sum) <= s.n(a) + s.n(b) + 1e-12 * (1.0 + s.n(a) + s.n(b)));
        let ta: Vec<f64> = a.iter().map(|x| t * x).collect();
        prop_assert!((s.n(&ta) - t.abs() * s.n(a)).abs() <= 1e-12 * (1.0 + s.n(&ta)));
    }

    #[test]
    fn holder(p in kind(), n in 1usize..5, seed in vecs(4, 2)) {
        let s = NormSpec::new(n, p);
        let (v, w) = (&seed[0][..n], &seed[1][..n]);
        prop_assert!(dot(w, v) <= s.dn(w) * s.n(v) + 1e-12 * (1.0 + s.dn(w) * s.n(v)));
    }

    #[test]
    fn pair_norms_are_dual(p in kind(), q in kind(), n in 1usize..4, m in 1usize..4, seed in vecs(3, 4)) {
        let pair = ProductNormSpec::new(NormSpec::new(n, p), NormSpec::new(m, q));
        let (x, y, xs, ys) = (&seed[0][..n], &seed[1][..m], &seed[2][..n], &seed[3][..m]);
        let lhs = dot(xs, x) + dot(ys, y);
        let rhs = pair.pair_norm_dual(xs, ys).unwrap() * pair.pair_norm_primal(x, y).unwrap();
        prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs));
    }
}
