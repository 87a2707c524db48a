use lastexit::limit_laws::ks_abs_sup_survival_inverse;
use lastexit::saa::{
    saa_solve, sample_size_n, shapiro_size, sigma2_saa, toy_problem, verify_sequential_coverage,
    Sigma2Variant,
};
use lastexit::{SeedSpec, SizingConvention};

#[test]
fn two_point_value_converges() {
    let p = toy_problem("two-point", Some(0.0)).unwrap();
    let r = saa_solve(&p, 200_000, &SeedSpec::new(61, 0)).unwrap();
    assert!((r.v_hat - 0.5).abs() < 0.01, "v̂ = {}", r.v_hat);
}

#[test]
fn two_point_risk_averse_picks_midpoint() {
    let p = toy_problem("two-point", Some(0.5)).unwrap();
    let r = saa_solve(&p, 20_000, &SeedSpec::new(62, 0)).unwrap();
    assert_eq!(r.x_hat, 0.5);
}

#[test]
fn sample_size_reference_value() {
    let b = ks_abs_sup_survival_inverse(0.05).unwrap();
    let n = sample_size_n(0.1, 0.1, 1.0, SizingConvention::Derived).unwrap();
    assert_eq!(n, (100.0 * b * b).ceil() as u64);
}

#[test]
fn shapiro_ratio_grows_as_eps_shrinks() {
    let ratio = |eps: f64| {
        shapiro_size(1.0, 1.0, 0.1, eps).unwrap() as f64
            / sample_size_n(0.1, eps, 1.0, SizingConvention::Derived).unwrap() as f64
    };
    assert!(ratio(1e-4) > ratio(1e-1));
}

#[test]
fn pilot_sigma2_matches_exact() {
    let p = toy_problem("newsvendor", None).unwrap();
    let (x, _, _) = p.exact_optimum().unwrap();
    let exact = p.exact_sigma2(x, Sigma2Variant::Symmetric).unwrap();
    let est = sigma2_saa(&p, x, 50_000, &SeedSpec::new(63, 0), Sigma2Variant::Symmetric).unwrap();
    assert!((est.sigma2 - exact).abs() / exact < 0.05, "{} vs {exact}", est.sigma2);
}

#[test]
fn huge_eps_always_covered() {
    let p = toy_problem("newsvendor", None).unwrap();
    let c = verify_sequential_coverage(&p, 0.1, 1e6, 5.0, 500, &SeedSpec::new(64, 0), SizingConvention::Derived)
        .unwrap();
    assert_eq!(c.coverage, 1.0);
}
