use lastexit::last_time::{
    asymptotic_relative_efficiency, band_ratio, simulate_trajectory_draws, ScalarLaw,
    TrajectoryModel, DEFAULT_HORIZON_MULTIPLE,
};
use lastexit::mc::quantile_sorted;
use lastexit::verify::oracle::ks_two_sample;
use lastexit::{ErrorTrajectory, SeedSpec};

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn mean_over_median_efficiency_near_half_pi() {
    let eps = 0.05;
    let law = ScalarLaw::StandardNormal;
    let run = |model: TrajectoryModel, stream| {
        let d = simulate_trajectory_draws(&model, eps, DEFAULT_HORIZON_MULTIPLE, 2000, &SeedSpec::new(41, stream), &[])
            .unwrap();
        assert!(d.censored_fraction() < 0.01);
        quantile_sorted(&sorted(d.n), 0.5)
    };
    let median_n = run(TrajectoryModel::Median(law), 1);
    let mean_n = run(TrajectoryModel::Mean(law), 2);
    let are = asymptotic_relative_efficiency(median_n, mean_n, 1.0, 1.0).unwrap();
    let target = std::f64::consts::FRAC_PI_2;
    assert!((are - target).abs() / target < 0.15, "ARE = {are}");
}

#[test]
fn band_ratio_needs_no_scaling() {
    let band = [(1.0, 1.53)];
    let draws = |eps: f64, stream| {
        let d = simulate_trajectory_draws(
            &TrajectoryModel::Mean(ScalarLaw::CenteredUniform),
            eps,
            DEFAULT_HORIZON_MULTIPLE,
            2000,
            &SeedSpec::new(43, stream),
            &band,
        )
        .unwrap();
        sorted(d.r[0].iter().flatten().copied().collect())
    };
    let coarse = draws(0.05, 1);
    let fine = draws(0.025, 2);
    let (d, _) = ks_two_sample(&coarse, &fine);
    assert!(d < 0.1, "KS distance {d}");
}

#[test]
fn band_ratio_undefined_without_exceedances() {
    let traj = ErrorTrajectory::new(vec![0.01, 0.02, 0.03], "abs").unwrap();
    assert_eq!(band_ratio(&traj, 0.1, 1.0, 2.0).unwrap(), None);
    assert!(band_ratio(&traj, 0.1, 0.5, 2.0).is_err());
}
