use std::sync::Arc;

use proptest::prelude::*;
use regradius::mappings::{Builtin, SineField, VectorField};
use regradius::{linalg, GraphPoint, MappingModel, Matrix, NormKind, SampledGraph};

fn models() -> Vec<MappingModel> {
    vec![
        MappingModel::identity(2),
        MappingModel::linear(Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap()),
        MappingModel::linear(Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap()),
        MappingModel::builtin(Builtin::AbsBranches, 2),
        MappingModel::builtin(Builtin::Parabola, 2),
        MappingModel::builtin(Builtin::ConstantZero, 2),
    ]
}

proptest! {
    #[test]
    fn images_lie_on_graph(which in 0usize..6, x in prop::collection::vec(-2.0..2.0f64, 2)) {
        let f = &models()[which];
        for y in f.images(&x) {
            prop_assert!(f.distance_to_image(&x, &y) <= 1e-10);
            prop_assert!(f.inverse_distance(&x, &y) <= 1e-8);
        }
    }

    #[test]
    fn perturbed_images_shift_exactly(
        which in 0usize..6,
        x in prop::collection::vec(-2.0..2.0f64, 2),
        b in prop::collection::vec(-1.0..1.0f64, 4),
        alpha in 0.0..1.0f64,
    ) {
        let f = &models()[which];
        let m = f.range.dimension;
        let rows: Vec<Vec<f64>> = (0..m).map(|i| b[2 * i..2 * i + 2].to_vec()).collect();
        let field = Arc::new(SineField(Matrix::from_rows(&rows).unwrap()));
        let g = f.add_perturbation(field.clone(), alpha, &[0.0, 0.0]).unwrap();
        let fx = field.eval(&x);
        let expect: Vec<Vec<f64>> = f
            .images(&x)
            .into_iter()
            .map(|y| y.iter().zip(&fx).map(|(a, c)| a + alpha * c).collect())
            .collect();
        prop_assert_eq!(g.images(&x), expect);
    }

    #[test]
    fn finite_graph_inverse_distance_is_brute_force(
        raw in prop::collection::vec((prop::collection::vec(-1.0..1.0f64, 2), 0i32..3), 2..25),
        x in prop::collection::vec(-1.0..1.0f64, 2),
        pick in 0usize..25,
    ) {
        let points: Vec<GraphPoint> = raw.iter().map(|(x, j)| GraphPoint::new(x.clone(), vec![*j as f64 * 0.5])).collect();
        let radius = 3.0;
        let f = MappingModel::finite_graph(
            SampledGraph { base: points[0].clone(), points: points.clone(), radius },
            NormKind::Two,
            NormKind::Two,
        );
        let y = points[pick % points.len()].y.clone();
        let tol_y = 1e-9 * (1.0 + radius);
        let brute = points
            .iter()
            .filter(|p| (p.y[0] - y[0]).abs() <= tol_y)
            .map(|p| linalg::euclid(&linalg::sub(&p.x, &x)))
            .fold(f64::INFINITY, f64::min);
        prop_assert_eq!(f.inverse_distance(&x, &y), brute);
    }
}
