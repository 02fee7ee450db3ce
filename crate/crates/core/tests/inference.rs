mod common;

use betalink::inference::{
    joint_test, link_adequacy_test, reset_test, wald_ci_params, wald_ci_surfaces, z_test, TestKind,
};
use betalink::simulate::{simulate_dataset, McScenario};
use betalink::{fit, FitOptions, FittedModel, LinkFamily, ParamId, ParamVector, ResponseVector};

/// First converged replication at or after `index`; some replications have
/// their λ̂ on the boundary.
fn fitted(n: usize, index: usize) -> (FittedModel, ResponseVector) {
    let theta = ParamVector::new(&[1.0, -2.0, 1.5], &[-1.0, -4.0, 1.0], 1.0, 1.0);
    let sc = McScenario::new(LinkFamily::AoAsymmetric, LinkFamily::AoAsymmetric, theta, n, 1, 31).unwrap();
    let spec = sc.spec().unwrap();
    (index..index + 20)
        .find_map(|i| {
            let y = simulate_dataset(&sc, i).unwrap();
            fit(&spec, &y, &FitOptions::default()).ok().map(|f| (f, y))
        })
        .expect("no converged replication")
}

#[test]
fn z_test_at_the_estimate_has_unit_p_value() {
    let (f, _) = fitted(200, 0);
    for id in f.param_ids() {
        let t = z_test(&f, id, f.theta_hat.get(id)).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
    }
}

#[test]
fn wald_statistic_ignores_restriction_order() {
    let (f, y) = fitted(200, 0);
    let options = FitOptions::default();
    let a = [(ParamId::Beta(1), -1.8), (ParamId::Gamma(2), 0.0), (ParamId::Lambda1, 1.2)];
    let b = [a[2], a[0], a[1]];
    let wa = joint_test(&f, &y, &a, TestKind::Wald, &options).unwrap();
    let wb = joint_test(&f, &y, &b, TestKind::Wald, &options).unwrap();
    assert!((wa.statistic - wb.statistic).abs() <= 1e-9 * wa.statistic.max(1.0));
    assert_eq!(wa.dof, 3);
}

#[test]
fn the_four_statistics_are_non_negative_on_a_moderate_alternative() {
    let (f, y) = fitted(300, 5);
    let options = FitOptions::default();
    let restriction = [(ParamId::Beta(1), -1.8)];
    for kind in [TestKind::LikelihoodRatio, TestKind::Wald, TestKind::Score, TestKind::Gradient] {
        let t = joint_test(&f, &y, &restriction, kind, &options).unwrap();
        assert!(t.statistic.is_finite() && t.statistic >= 0.0, "{kind}: {t:?}");
        assert!((0.0..=1.0).contains(&t.p_value));
        assert_eq!(t.dof, 1);
    }
}

#[test]
fn empty_restriction_and_null_at_the_estimate() {
    let (f, y) = fitted(200, 2);
    let options = FitOptions::default();
    let empty = joint_test(&f, &y, &[], TestKind::LikelihoodRatio, &options).unwrap();
    assert_eq!((empty.statistic, empty.p_value), (0.0, 1.0));

    let at_hat = (f.theta_hat.lambda1, f.theta_hat.lambda2);
    let lr = link_adequacy_test(&f, &y, at_hat, TestKind::LikelihoodRatio, &options).unwrap();
    assert!(lr.statistic < 1e-6, "LR {}", lr.statistic);
    assert_eq!(lr.dof, 2);
}

#[test]
fn reset_statistic_is_a_two_degree_of_freedom_chi_square() {
    let (f, y) = fitted(200, 3);
    for kind in [TestKind::LikelihoodRatio, TestKind::Wald, TestKind::Score, TestKind::Gradient] {
        let t = reset_test(&f, &y, kind, &FitOptions::default()).unwrap();
        assert_eq!(t.dof, 2);
        assert!(t.statistic >= 0.0);
    }
}

#[test]
fn parameter_intervals_are_centered_and_ordered() {
    let (f, _) = fitted(200, 0);
    let ci = wald_ci_params(&f, 0.95).unwrap();
    assert_eq!(ci.len(), f.param_ids().len());
    for (id, w) in ci {
        assert!(w.lower < w.upper, "{id}");
        assert!(((w.upper - w.estimate) - (w.estimate - w.lower)).abs() < 1e-12);
        assert!(((w.upper - w.estimate) / w.std_error - 1.959963984540054).abs() < 1e-9);
    }
}

#[test]
fn surface_intervals_bracket_the_fitted_values() {
    let (f, _) = fitted(200, 0);
    let ci = wald_ci_surfaces(&f, 0.9).unwrap();
    for side in [&ci.mu, &ci.sigma] {
        assert_eq!(side.len(), 200);
        for s in side {
            assert!(s.lower <= s.estimate && s.estimate <= s.upper);
            assert!(s.lower > 0.0 && s.upper < 1.0);
        }
    }
}

#[test]
fn z_test_rejects_unknown_parameters_and_z_kind_is_not_a_joint_test() {
    let (f, y) = fitted(200, 0);
    assert!(z_test(&f, ParamId::Beta(7), 0.0).is_err());
    assert!(joint_test(&f, &y, &[(ParamId::Beta(0), 0.0)], TestKind::Z, &FitOptions::default()).is_err());
}
