use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use poissonkf::generator::{
    dynkin_check, generator_apply, DynkinOptions, JumpDiffusionSpec, JumpIntegration, TestFunction,
};
use proptest::prelude::*;

/// `dx = a x dt + g dw + nu dN`, `nu ~ N(0, v)`.
fn ou_with_gaussian_kicks(a: f64, g: f64, v: f64, lambda: f64) -> JumpDiffusionSpec {
    JumpDiffusionSpec::new(
        1,
        Arc::new(move |x| x * a),
        Arc::new(move |_| DMatrix::from_element(1, 1, g)),
        Arc::new(|_, nu| nu.clone()),
        DMatrix::from_element(1, 1, v),
        lambda,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn polynomial_derivatives_match_finite_differences(
        coeffs in proptest::collection::vec(-2.0f64..2.0, 1..5),
        x in -3.0f64..3.0,
    ) {
        let psi = TestFunction::coordinate_polynomial(2, 1, coeffs);
        let pts = [DVector::from_vec(vec![0.3, x])];
        prop_assert!(psi.derivative_mismatch(&pts) < 1e-6);
    }

    #[test]
    fn generator_is_linear(
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        z in -2.0f64..2.0,
        c1 in proptest::collection::vec(-1.0f64..1.0, 4),
        c2 in proptest::collection::vec(-1.0f64..1.0, 4),
    ) {
        let spec = ou_with_gaussian_kicks(-0.5, 0.8, 0.3, 2.0);
        let f = TestFunction::coordinate_polynomial(1, 0, c1);
        let g = TestFunction::coordinate_polynomial(1, 0, c2);
        let zv = DVector::from_element(1, z);
        let lhs = generator_apply(&spec, &TestFunction::combine(a, &f, b, &g), &zv).value;
        let rhs = a * generator_apply(&spec, &f, &zv).value + b * generator_apply(&spec, &g, &zv).value;
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn second_moment_generator_closed_form(
        a in -2.0f64..1.0,
        g in 0.0f64..2.0,
        v in 0.01f64..2.0,
        lambda in 0.1f64..10.0,
        x in -3.0f64..3.0,
    ) {
        let spec = ou_with_gaussian_kicks(a, g, v, lambda);
        let psi = TestFunction::coordinate_polynomial(1, 0, vec![0.0, 0.0, 1.0]);
        let eval = generator_apply(&spec, &psi, &DVector::from_element(1, x));
        let exact = 2.0 * a * x * x + g * g + lambda * v;
        prop_assert!((eval.value - exact).abs() < 1e-10 * (1.0 + exact.abs()), "{} vs {}", eval.value, exact);
        prop_assert_eq!(eval.jump_integration, JumpIntegration::GaussHermite { nodes_per_axis: 24 });
    }
}

#[test]
fn dynkin_with_gaussian_kicks() {
    let (a, g, v, lambda) = (-1.0, 1.0, 0.25, 2.0);
    let spec = ou_with_gaussian_kicks(a, g, v, lambda);
    let psi = TestFunction::coordinate_polynomial(1, 0, vec![0.0, 0.0, 1.0]);
    let x0 = DVector::from_element(1, 1.0);
    let opts = DynkinOptions { horizon: 1.0, n_paths: 40_000, dt: 1e-2 };
    let report = dynkin_check(&spec, &psi, &x0, opts, 21).unwrap();
    assert!(report.discrepancy() < 4.0, "{report:?}");
    // E x_T^2 solves m' = 2 a m + g^2 + lambda v
    let s = (g * g + lambda * v) / (-2.0 * a);
    let exact = s + (1.0 - s) * (2.0 * a).exp();
    // Euler bias is O(dt)
    assert!((report.mc_estimate - exact).abs() < 4.0 * report.direct_stderr + 0.01, "{report:?} vs {exact}");
}

#[test]
fn dynkin_is_reproducible() {
    let spec = ou_with_gaussian_kicks(-1.0, 0.5, 0.1, 1.0);
    let psi = TestFunction::coordinate_polynomial(1, 0, vec![0.0, 1.0]);
    let x0 = DVector::from_element(1, 0.5);
    let opts = DynkinOptions { horizon: 0.5, n_paths: 200, dt: 1e-2 };
    assert_eq!(dynkin_check(&spec, &psi, &x0, opts, 3).unwrap(), dynkin_check(&spec, &psi, &x0, opts, 3).unwrap());
}
