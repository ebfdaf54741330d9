use fracvisc::fracops::{caputo_l1, l1_weights, TimeGrid, TimeSeries};
use fracvisc::solver::solve;
use fracvisc::{
    BoundaryKind, DomainGeometry, EllipticOperator, FractionalOrder, ProblemSpec, Stepping,
};
use proptest::prelude::*;

fn spec(op: EllipticOperator, alpha: f64, u0: Vec<f64>) -> ProblemSpec {
    let cells = u0.len() - 1;
    ProblemSpec::new(
        DomainGeometry::interval(1.0, cells).unwrap(),
        TimeGrid::new(0.1, 12).unwrap(),
        FractionalOrder::new(alpha).unwrap(),
        op,
        u0,
        BoundaryKind::DirichletStrong,
        Stepping::ImplicitFixedPoint,
    )
    .unwrap()
}

fn pinned(mut v: Vec<f64>) -> Vec<f64> {
    let last = v.len() - 1;
    v[0] = 0.0;
    v[last] = 0.0;
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ordered_data_gives_ordered_solutions(
        alpha in 0.1f64..=1.0,
        eikonal in any::<bool>(),
        base in prop::collection::vec(-1.0f64..1.0, 9..17),
        lift in prop::collection::vec(0.0f64..0.5, 17),
    ) {
        let u0 = pinned(base);
        let v0 = pinned(u0.iter().zip(&lift).map(|(u, d)| u + d).collect());
        let op = if eikonal { EllipticOperator::Eikonal { speed: 1.0 } } else { EllipticOperator::laplacian() };
        let u = solve(&spec(op.clone(), alpha, u0)).unwrap();
        let v = solve(&spec(op, alpha, v0)).unwrap();
        for (a, b) in u.values.values().iter().zip(v.values.values()) {
            prop_assert!(*a <= b + 1e-12);
        }
    }

    #[test]
    fn l1_weights_positive_and_decreasing(alpha in 0.05f64..1.0, tau in 1e-4f64..1.0) {
        let w = l1_weights(FractionalOrder::new(alpha).unwrap(), tau, 64);
        prop_assert!(w.weights[0] > 0.0);
        for pair in w.weights.windows(2) {
            prop_assert!(pair[1] > 0.0 && pair[1] < pair[0]);
        }
    }

    #[test]
    fn l1_is_exact_on_linear_data(alpha in 0.05f64..1.0, slope in -3.0f64..3.0, steps in 2usize..200) {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let s = TimeSeries::from_fn(grid, |t| slope * t).unwrap();
        let order = FractionalOrder::new(alpha).unwrap();
        let exact = slope / fracvisc::fracops::gamma(2.0 - alpha).unwrap();
        let got = caputo_l1(&s, order, steps).unwrap();
        prop_assert!((got - exact).abs() <= 1e-10 * (1.0 + exact.abs()));
    }
}
