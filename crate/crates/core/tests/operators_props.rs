use msde_core::linalg::{dist, dot, norm, Matrix};
use msde_core::operators::{minimal_section, resolvent, yosida};
use msde_core::{ConvexSet, OperatorSpec};
use proptest::prelude::*;

fn families() -> Vec<OperatorSpec> {
    vec![
        OperatorSpec::Zero,
        OperatorSpec::LinearPsd {
            // symmetric part [[2, 0.5], [0.5, 1]] is positive definite; the skew part is allowed
            matrix: Matrix::from_rows(&[vec![2.0, 1.5], vec![-0.5, 1.0]]).unwrap(),
        },
        OperatorSpec::normal_cone(ConvexSet::Box { lower: vec![-1.0, 0.0], upper: vec![1.0, 2.0] }),
        OperatorSpec::normal_cone(ConvexSet::Ball { center: vec![0.5, -0.5], radius: 1.5 }),
        OperatorSpec::normal_cone(ConvexSet::HalfSpace { normal: vec![1.0, 2.0], offset: 0.5 }),
        OperatorSpec::SubdiffPower { coefficient: 1.0, exponent: 1.0 },
        OperatorSpec::SubdiffPower { coefficient: 0.7, exponent: 1.5 },
        OperatorSpec::SubdiffPower { coefficient: 2.0, exponent: 2.0 },
        OperatorSpec::SubdiffPower { coefficient: 0.5, exponent: 3.0 },
    ]
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, 2)
}

fn lambda() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1e-3), Just(0.1), Just(0.5), 0.01..3.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn resolvent_is_nonexpansive(x in point(), y in point(), l in lambda()) {
        for op in families() {
            let jx = resolvent(&op, l, &x).unwrap();
            let jy = resolvent(&op, l, &y).unwrap();
            prop_assert!(dist(&jx, &jy) <= dist(&x, &y) + 1e-12, "{op:?}");
        }
    }

    #[test]
    fn yosida_is_monotone(x in point(), y in point(), l in lambda()) {
        for op in families() {
            let ax = yosida(&op, l, &x).unwrap();
            let ay = yosida(&op, l, &y).unwrap();
            let d: Vec<f64> = ax.iter().zip(&ay).map(|(a, b)| a - b).collect();
            let s: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            prop_assert!(dot(&d, &s) >= -1e-12, "{op:?}");
        }
    }

    #[test]
    fn resolvent_identity(x in point(), l in lambda()) {
        for op in families() {
            let j = resolvent(&op, l, &x).unwrap();
            let a = yosida(&op, l, &x).unwrap();
            for i in 0..2 {
                prop_assert!((j[i] + l * a[i] - x[i]).abs() <= 1e-12 * (1.0 + x[i].abs()), "{op:?}");
            }
        }
    }

    #[test]
    fn resolvent_lands_in_domain(x in point(), l in lambda()) {
        for op in families() {
            let j = resolvent(&op, l, &x).unwrap();
            prop_assert!(op.in_domain(&j, 1e-12), "{op:?}");
        }
    }

    #[test]
    fn yosida_norm_nondecreasing_as_lambda_shrinks(x in point()) {
        for op in families() {
            let x = msde_core::operators::project_domain(&op, &x);
            let norms: Vec<f64> = [1.0, 0.5, 0.1, 0.01, 0.001]
                .iter()
                .map(|&l| norm(&yosida(&op, l, &x).unwrap()))
                .collect();
            let limit = norm(&minimal_section(&op, &x).unwrap());
            for w in norms.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12, "{op:?}: {norms:?}");
            }
            prop_assert!(norms[4] <= limit + 1e-12, "{op:?}: {norms:?} vs {limit}");
        }
    }

    #[test]
    fn interior_points_are_fixed(u in prop::collection::vec(0.05..0.95f64, 2), l in lambda()) {
        let sets = [
            ConvexSet::Box { lower: vec![-1.0, 0.0], upper: vec![1.0, 2.0] },
            ConvexSet::Ball { center: vec![0.5, -0.5], radius: 1.5 },
        ];
        let pts = [
            vec![-1.0 + 2.0 * u[0], 2.0 * u[1]],
            vec![0.5 + 1.5 * u[0] * (std::f64::consts::TAU * u[1]).cos(), -0.5 + 1.5 * u[0] * (std::f64::consts::TAU * u[1]).sin()],
        ];
        for (set, x) in sets.into_iter().zip(pts) {
            let op = OperatorSpec::normal_cone(set);
            prop_assert_eq!(resolvent(&op, l, &x).unwrap(), x);
        }
    }
}

#[test]
fn yosida_error_shrinks_linearly_in_lambda() {
    // |A_λ x| approaches |A°x| at rate O(λ) for the smooth families
    for op in families() {
        let x = msde_core::operators::project_domain(&op, &[1.2, -0.7]);
        let limit = norm(&minimal_section(&op, &x).unwrap());
        let e1 = (limit - norm(&yosida(&op, 1e-3, &x).unwrap())).abs();
        let e2 = (limit - norm(&yosida(&op, 1e-4, &x).unwrap())).abs();
        assert!(e2 <= 0.2 * e1 + 1e-12, "{op:?}: {e1} {e2}");
    }
}
