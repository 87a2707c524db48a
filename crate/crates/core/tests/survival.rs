use lastexit::survival::{band_report, band_size, nelson_aalen, sigma2_hat, SurvivalModel};
use lastexit::verify::oracle::sigma2_exponential_uniform;
use lastexit::{CensoredSample, SeedSpec, SizingConvention};

#[test]
fn sigma2_hat_close_to_integral() {
    let model = SurvivalModel::default();
    let truth = model.sigma2(1.0);
    assert!((truth - sigma2_exponential_uniform(1.0, 3.0, 1.0)).abs() < 1e-6);
    let sample = model.sample_n(5000, 1.0, &mut SeedSpec::new(51, 0).rng()).unwrap();
    let est = sigma2_hat(&sample, 1.0).unwrap();
    assert!((est - truth).abs() / truth < 0.05, "σ̂² = {est}, σ² = {truth}");
}

#[test]
fn nelson_aalen_consistent() {
    let model = SurvivalModel::default();
    let sup_err = |n| {
        let sample = model.sample_n(n, 1.0, &mut SeedSpec::new(52, n as u64).rng()).unwrap();
        let curve = nelson_aalen(&sample).unwrap();
        (0..=100)
            .map(|i| {
                let t = i as f64 / 100.0;
                (curve.eval(t) - model.cumulative_hazard(t)).abs()
            })
            .fold(0.0, f64::max)
    };
    let small = sup_err(200);
    let large = sup_err(20_000);
    assert!(large < 0.03, "sup error {large}");
    assert!(large < small);
}

#[test]
fn uncensored_closed_form() {
    let sample = CensoredSample::new((1..=20).map(|i| (i as f64, true)).collect(), 20.0).unwrap();
    let curve = nelson_aalen(&sample).unwrap();
    let want: f64 = (1..=20).map(|k| 1.0 / k as f64).sum();
    assert!((curve.eval(20.0) - want).abs() < 1e-12);
}

#[test]
fn csv_round_trip() {
    let sample = CensoredSample::new(vec![(0.5, true), (1.0, false), (2.0, true)], 2.0).unwrap();
    let mut buf = Vec::new();
    sample.write_csv(&mut buf).unwrap();
    let back = CensoredSample::from_csv(buf.as_slice(), Some(2.0)).unwrap();
    assert_eq!(back.records(), sample.records());
}

#[test]
fn band_report_rejects_empty_risk_set() {
    let sample = CensoredSample::new(vec![(0.5, true), (1.0, true)], 1.5).unwrap();
    assert!(band_report(&sample, 0.15, 0.1, SizingConvention::Derived).is_err());
}

#[test]
fn band_interval_ordered() {
    let spec = band_size(2.0, 0.15, 0.1, SizingConvention::Derived).unwrap();
    assert!(spec.m_low <= spec.m_high);
    assert_eq!(spec.recommended_m(), spec.m_high);
}
