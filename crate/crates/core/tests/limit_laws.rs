use lastexit::gp_sim::{BrownianMotionSup, BrownianSheetSup, CovMatrix, Grid1D, KieferMullerSup};
use lastexit::limit_laws::{
    adler_2d_bound, adler_2d_series, borell_tail_bound, ks_abs_sup_cdf, ks_abs_sup_survival_inverse,
    sheet_sup_quantile, variance_measure_sigma2, SupDistribution,
};
use lastexit::verify::oracle::ks_two_sample;
use lastexit::SeedSpec;

#[test]
fn frozen_cdf_values() {
    for (lambda, want) in [
        (0.5, 0.0091570),
        (1.0, 0.3707774),
        (1.5, 0.7327848),
        (2.0, 0.9089995),
        (2.5, 0.9751613),
    ] {
        let got = ks_abs_sup_cdf(lambda);
        assert!((got - want).abs() < 1e-7, "C({lambda}) = {got}, want {want}");
    }
}

#[test]
fn frozen_inverse_values() {
    for (p, want) in [
        (0.05, 2.2414027),
        (0.025, 2.4977055),
        (0.75, 0.870556),
        (0.5, 1.148973),
        (0.25, 1.534104),
    ] {
        let got = ks_abs_sup_survival_inverse(p).unwrap();
        assert!((got - want).abs() < 1e-6, "S⁻¹({p}) = {got}, want {want}");
    }
}

#[test]
fn kiefer_single_function_matches_brownian_motion() {
    let grid = Grid1D::dyadic(10);
    let kiefer = KieferMullerSup {
        s_grid: grid.clone(),
        cov: CovMatrix::new(vec![vec![1.0]]).unwrap(),
    };
    let bm = BrownianMotionSup { grid };
    let a = SupDistribution::simulate(&kiefer, 10_000, &SeedSpec::new(101, 0));
    let b = SupDistribution::simulate(&bm, 10_000, &SeedSpec::new(202, 0));
    let (d, p) = ks_two_sample(a.sorted(), b.sorted());
    assert!(p > 0.001 && d < 0.02, "D = {d}, p = {p}");
}

#[test]
fn borell_bound_dominates_brownian_tail() {
    let sampler = BrownianMotionSup { grid: Grid1D::dyadic(10) };
    let dist = SupDistribution::simulate(&sampler, 100_000, &SeedSpec::new(5, 0));
    let second: f64 = dist.sorted().iter().map(|v| v * v).sum::<f64>() / dist.len() as f64;
    for lambda in [2.0_f64, 4.0, 8.0] {
        let (p, se) = dist.survival(lambda.sqrt());
        let bound = borell_tail_bound(lambda, second).unwrap();
        assert!(bound + 3.0 * se >= p, "λ = {lambda}: bound {bound} < tail {p}");
    }
}

// Quadrants (−∞, x] × (−∞, y] under the uniform law on the unit square,
// restricted to an 8 × 8 lattice of corners.
fn quadrant_covariance() -> CovMatrix {
    let corners: Vec<(f64, f64)> = (1..=8)
        .flat_map(|i| (1..=8).map(move |j| (i as f64 / 8.0, j as f64 / 8.0)))
        .collect();
    let rows = corners
        .iter()
        .map(|&(x, y)| {
            corners
                .iter()
                .map(|&(u, v)| x.min(u) * y.min(v) - x * y * u * v)
                .collect()
        })
        .collect();
    CovMatrix::new(rows).unwrap()
}

#[test]
fn adler_bound_dominates_quadrant_kiefer_tail() {
    let sampler = KieferMullerSup {
        s_grid: Grid1D::dyadic(8),
        cov: quadrant_covariance(),
    };
    let dist = SupDistribution::simulate(&sampler, 5_000, &SeedSpec::new(9, 0));
    for lambda in [1.0_f64, 1.5, 2.0, 3.0] {
        let (p, se) = dist.survival(lambda.sqrt());
        let bound = adler_2d_bound(lambda).unwrap();
        assert!(bound + 3.0 * se >= p, "λ = {lambda}: bound {bound} < tail {p}");
    }
}

#[test]
fn adler_series_nonincreasing_on_scan() {
    let mut prev = f64::INFINITY;
    for i in 0..=450 {
        let v = adler_2d_series(0.5 + i as f64 * 0.01);
        assert!(v <= prev + 1e-12);
        prev = v;
    }
}

#[test]
fn sheet_quantile_monotone_in_alpha() {
    let sampler = BrownianSheetSup::dyadic(6);
    let seed = SeedSpec::new(3, 0);
    let q01 = sheet_sup_quantile(0.01, &sampler, 4_000, &seed).unwrap();
    let q10 = sheet_sup_quantile(0.10, &sampler, 4_000, &seed).unwrap();
    assert!(q01.point > q10.point);
    assert!(sheet_sup_quantile(0.05, &sampler, 999, &seed).is_err());
}

#[test]
fn variance_measure_recovers_variance_of_mean() {
    let grid = Grid1D::dyadic(10);
    let sigma2: f64 = 1.0 / 12.0;
    let phi = lastexit::gp_sim::Scaled {
        inner: BrownianMotionSup { grid: grid.clone() },
        factor: sigma2.sqrt(),
    };
    let base = KieferMullerSup {
        s_grid: grid,
        cov: CovMatrix::new(vec![vec![1.0]]).unwrap(),
    };
    let got = variance_measure_sigma2(&phi, &base, 20_000, &SeedSpec::new(17, 0)).unwrap();
    assert!((got - sigma2).abs() / sigma2 < 0.05, "σ² = {got}");
}
