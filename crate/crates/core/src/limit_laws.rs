//! Distribution of `sup_{[0,1]} |B|`, Gaussian tail bounds for suprema of the
//! limit processes, and Monte Carlo quantiles of those suprema.
//!
//! The closed form is the alternating series
//!
//! ```text
//! C(λ) = P(sup |B| ≤ λ) = Σ_{k∈ℤ} (−1)^k [Φ((2k+1)λ) − Φ((2k−1)λ)]
//! ```
//!
//! exposed as a CDF ([`ks_abs_sup_cdf`]) and a survival function
//! ([`ks_abs_sup_survival`]). Every sample-size rule in the crate goes through
//! [`ks_abs_sup_survival_inverse`].

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp_sim::SupSampler;
use crate::mc::{self, quantile_se_sorted, quantile_sorted, replicate};
use crate::rng::SeedSpec;

/// Below this level the CDF is returned as exactly 0 (its true value is
/// below 1e-100 there).
pub const CDF_ZERO_BELOW: f64 = 0.05;
/// Bisection bracket for the survival inverse.
pub const INVERSE_BRACKET: (f64, f64) = (1e-6, 10.0);
/// `ζ(1/2)/√(2π)`: leading constant of the gap between the grid maximum and
/// the continuum maximum of Brownian motion.
pub const SUP_GRID_BIAS_CONSTANT: f64 = 0.5826;
/// Minimum replications for Monte Carlo quantiles and moments.
pub const MIN_MC_REPLICATIONS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("probability {0} must lie strictly between 0 and 1")]
    InvalidProbability(f64),
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{got} replications requested, at least {min} required")]
    TooFewReplications { got: usize, min: usize },
    #[error("base process has zero median supremum; variance measure undefined")]
    DegenerateBase,
}

pub(crate) fn positive(name: &'static str, value: f64) -> Result<f64, LawError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(LawError::NonPositive { name, value })
    }
}

pub(crate) fn open_probability(p: f64) -> Result<f64, LawError> {
    if p > 0.0 && p < 1.0 {
        Ok(p)
    } else {
        Err(LawError::InvalidProbability(p))
    }
}

/// Upper standard normal tail `1 − Φ(x)`.
#[inline]
pub fn normal_upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `P(sup_{s∈[0,1]} |B_s| ≤ λ)`.
///
/// The `k` and `−k` terms of the series are equal, so the sum runs over
/// `k ≥ 0` with doubled weights, each term written as a difference of upper
/// tails. Summation stops once a term falls below `1e-13` (after at least
/// three terms).
pub fn ks_abs_sup_cdf(lambda: f64) -> f64 {
    if lambda.is_nan() || lambda < CDF_ZERO_BELOW {
        return 0.0;
    }
    if lambda.is_infinite() {
        return 1.0;
    }
    // k = 0: Φ(λ) − Φ(−λ)
    let mut sum = 1.0 - 2.0 * normal_upper_tail(lambda);
    let mut k = 1u32;
    loop {
        let kf = k as f64;
        let diff = normal_upper_tail((2.0 * kf - 1.0) * lambda)
            - normal_upper_tail((2.0 * kf + 1.0) * lambda);
        let term = if k % 2 == 0 { 2.0 * diff } else { -2.0 * diff };
        sum += term;
        if term.abs() < 1e-13 && k >= 2 {
            break;
        }
        k += 1;
    }
    sum.clamp(0.0, 1.0)
}

/// `P(sup_{s∈[0,1]} |B_s| > λ) = 1 − C(λ)`.
pub fn ks_abs_sup_survival(lambda: f64) -> f64 {
    1.0 - ks_abs_sup_cdf(lambda)
}

/// The level `λ` with `P(sup |B| > λ) = p`, by bisection on
/// [`INVERSE_BRACKET`].
pub fn ks_abs_sup_survival_inverse(p: f64) -> Result<f64, LawError> {
    open_probability(p)?;
    let (mut lo, mut hi) = INVERSE_BRACKET;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ks_abs_sup_survival(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Which survival levels bracket a quantile of the sheet supremum.
///
/// `Derived` uses `P(sup|B| > b) ∈ [α/2, α]`, so `b ∈ [S⁻¹(α), S⁻¹(α/2)]`.
/// `PaperLiteral` reproduces the published `A⁻¹(√α)`, `A⁻¹(√α/2)` arguments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizingConvention {
    #[default]
    Derived,
    PaperLiteral,
}

impl SizingConvention {
    /// `(p_low, p_high)`: the bracket is `[S⁻¹(p_low), S⁻¹(p_high)]`.
    pub fn survival_levels(self, alpha: f64) -> (f64, f64) {
        match self {
            Self::Derived => (alpha, alpha / 2.0),
            Self::PaperLiteral => (alpha.sqrt(), alpha.sqrt() / 2.0),
        }
    }
}

/// `σ² · S⁻¹(p)² / ε²`: the (unrounded) number of observations after which the
/// error stays below `ε` with probability governed by survival level `p`.
pub fn scaled_size(sigma2: f64, eps: f64, survival_level: f64) -> Result<f64, LawError> {
    positive("sigma2", sigma2)?;
    positive("eps", eps)?;
    let b = ks_abs_sup_survival_inverse(survival_level)?;
    Ok(sigma2 * b * b / (eps * eps))
}

/// Borell's inequality for a centred Gaussian supremum on the squared scale:
/// `P(‖X‖² ≥ λ) ≤ min(1, 2 exp(−λ / (8 E‖X‖²)))`.
pub fn borell_tail_bound(lambda: f64, second_moment: f64) -> Result<f64, LawError> {
    positive("lambda", lambda)?;
    positive("second_moment", second_moment)?;
    Ok((2.0 * (-lambda / (8.0 * second_moment)).exp()).min(1.0))
}

/// `4 Σ_{k≥1} (8k²λ − 2) e^{−2k²λ}` without clipping.
pub fn adler_2d_series(lambda: f64) -> f64 {
    let mut sum = 0.0;
    let mut k = 1u32;
    loop {
        let k2 = (k as f64).powi(2);
        let term = 4.0 * (8.0 * k2 * lambda - 2.0) * (-2.0 * k2 * lambda).exp();
        sum += term;
        // Only stop once past the peak of x·e^{−x}, where terms shrink.
        if term.abs() < 1e-14 && 2.0 * k2 * lambda > 2.0 {
            break;
        }
        k += 1;
        if k > 1_000_000 {
            break;
        }
    }
    sum
}

/// Tail bound for the squared supremum of a Kiefer process over
/// `(0,1] × ℝ²`: `min(1, adler_2d_series(λ))`.
pub fn adler_2d_bound(lambda: f64) -> Result<f64, LawError> {
    positive("lambda", lambda)?;
    Ok(adler_2d_series(lambda).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    ReflectionSandwich,
    Borell,
    Adler2d,
}

impl BoundMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ReflectionSandwich => "reflection_sandwich",
            Self::Borell => "borell",
            Self::Adler2d => "adler2d",
        }
    }
}

/// Two-sided bound on a tail probability at `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub lambda: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: BoundMethod,
}

impl TailBound {
    /// `P(sup|S| > b) ∈ [S_B(b), 2 S_B(b)]` for the Brownian sheet on `[0,1]²`
    /// (`lambda` is `b`, on the supremum scale).
    pub fn reflection_sandwich(b: f64) -> Self {
        let sb = ks_abs_sup_survival(b);
        Self {
            lambda: b,
            lower: sb,
            upper: (2.0 * sb).min(1.0),
            method: BoundMethod::ReflectionSandwich,
        }
    }

    pub fn borell(lambda: f64, second_moment: f64) -> Result<Self, LawError> {
        Ok(Self {
            lambda,
            lower: 0.0,
            upper: borell_tail_bound(lambda, second_moment)?,
            method: BoundMethod::Borell,
        })
    }

    pub fn adler2d(lambda: f64) -> Result<Self, LawError> {
        Ok(Self {
            lambda,
            lower: 0.0,
            upper: adler_2d_bound(lambda)?,
            method: BoundMethod::Adler2d,
        })
    }
}

/// Monte Carlo quantile of a supremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate {
    /// Upper-tail level `α`; `point` estimates the `1 − α` quantile.
    pub level: f64,
    pub point: f64,
    pub mc_se: f64,
    pub replications: usize,
    pub grid_resolution: usize,
}

impl QuantileEstimate {
    /// `3·mc_se` plus the grid-supremum bias allowance.
    pub fn tolerance(&self) -> f64 {
        3.0 * self.mc_se + grid_bias_allowance(self.grid_resolution)
    }
}

/// Allowance for the downward bias of a grid supremum with `resolution`
/// points per axis.
pub fn grid_bias_allowance(resolution: usize) -> f64 {
    SUP_GRID_BIAS_CONSTANT / (resolution.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub mc_se: f64,
    pub replications: usize,
}

/// Sorted Monte Carlo draws of a supremum.
#[derive(Debug, Clone)]
pub struct SupDistribution {
    sorted: Vec<f64>,
    resolution: usize,
}

impl SupDistribution {
    pub fn simulate<S: SupSampler + ?Sized>(sampler: &S, replications: usize, seed: &SeedSpec) -> Self {
        let mut sorted = replicate(seed, replications, |_, rng| sampler.sample_sup(rng));
        mc::sort_floats(&mut sorted);
        Self {
            sorted,
            resolution: sampler.resolution(),
        }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Upper-`alpha` quantile estimate.
    pub fn upper_quantile(&self, alpha: f64) -> QuantileEstimate {
        QuantileEstimate {
            level: alpha,
            point: quantile_sorted(&self.sorted, 1.0 - alpha),
            mc_se: quantile_se_sorted(&self.sorted, 1.0 - alpha),
            replications: self.sorted.len(),
            grid_resolution: self.resolution,
        }
    }

    /// Empirical `P(sup > x)` and its binomial standard error.
    pub fn survival(&self, x: f64) -> (f64, f64) {
        let n = self.sorted.len() as f64;
        let above = self.sorted.len() - self.sorted.partition_point(|v| *v <= x);
        let p = above as f64 / n;
        (p, (p * (1.0 - p) / n).sqrt())
    }

    /// Median of the squared supremum.
    pub fn median_of_squares(&self) -> f64 {
        // Squaring is monotone on non-negative draws, so order is preserved.
        let sq: Vec<f64> = self.sorted.iter().map(|v| v * v).collect();
        quantile_sorted(&sq, 0.5)
    }
}

/// `E sup²` by Monte Carlo, with standard error.
pub fn estimate_sup_second_moment<S: SupSampler + ?Sized>(
    sampler: &S,
    replications: usize,
    seed: &SeedSpec,
) -> Result<MomentEstimate, LawError> {
    if replications < MIN_MC_REPLICATIONS {
        return Err(LawError::TooFewReplications {
            got: replications,
            min: MIN_MC_REPLICATIONS,
        });
    }
    let squares = replicate(seed, replications, |_, rng| sampler.sample_sup(rng).powi(2));
    let (mean, mc_se) = mc::mean_and_se(&squares);
    Ok(MomentEstimate {
        mean,
        mc_se,
        replications,
    })
}

/// Upper-`alpha` quantile of `sup |S|` over the sheet grid of `sampler`.
pub fn sheet_sup_quantile<S: SupSampler + ?Sized>(
    alpha: f64,
    sampler: &S,
    replications: usize,
    seed: &SeedSpec,
) -> Result<QuantileEstimate, LawError> {
    open_probability(alpha)?;
    if replications < MIN_MC_REPLICATIONS {
        return Err(LawError::TooFewReplications {
            got: replications,
            min: MIN_MC_REPLICATIONS,
        });
    }
    Ok(SupDistribution::simulate(sampler, replications, seed).upper_quantile(alpha))
}

/// Whether `estimate` lies in `[S⁻¹(p_low), S⁻¹(p_high)]` widened by its
/// tolerance. Returns the bracket alongside the verdict.
pub fn sandwich_check(
    estimate: &QuantileEstimate,
    convention: SizingConvention,
) -> Result<(bool, f64, f64), LawError> {
    let (p_low, p_high) = convention.survival_levels(estimate.level);
    let lo = ks_abs_sup_survival_inverse(p_low)?;
    let hi = ks_abs_sup_survival_inverse(p_high)?;
    let tol = estimate.tolerance();
    let ok = lo <= estimate.point + tol && estimate.point <= hi + tol;
    Ok((ok, lo, hi))
}

/// Variance measure `Median sup|φ̇Z|² / Median sup|Z|²`.
///
/// Both samplers see the same stream in each replicate, so pathwise-coupled
/// samplers give exact ratios.
pub fn variance_measure_sigma2<A, B>(
    sampler_phi: &A,
    sampler_base: &B,
    replications: usize,
    seed: &SeedSpec,
) -> Result<f64, LawError>
where
    A: SupSampler + ?Sized,
    B: SupSampler + ?Sized,
{
    if replications == 0 {
        return Err(LawError::TooFewReplications { got: 0, min: 1 });
    }
    let pairs = replicate(seed, replications, |_, rng| {
        let mut twin = rng.clone();
        let a = sampler_phi.sample_sup(rng);
        let b = sampler_base.sample_sup(&mut twin);
        (a * a, b * b)
    });
    let mut phi: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut base: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    mc::sort_floats(&mut phi);
    mc::sort_floats(&mut base);
    let denom = quantile_sorted(&base, 0.5);
    if denom <= 0.0 {
        return Err(LawError::DegenerateBase);
    }
    Ok(quantile_sorted(&phi, 0.5) / denom)
}

/// One row of an exported quantile or bound table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub level: f64,
    pub point: f64,
    pub mc_se: f64,
    pub method: String,
}

/// Write rows as CSV with header `level,point,mc_se,method`.
pub fn write_quantile_csv<W: Write>(rows: &[QuantileRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp_sim::{BrownianMotionSup, Grid1D, Scaled, ZeroProcess};

    #[test]
    fn cdf_endpoints() {
        assert_eq!(ks_abs_sup_cdf(0.0), 0.0);
        assert_eq!(ks_abs_sup_cdf(0.04), 0.0);
        assert!((ks_abs_sup_cdf(8.0) - 1.0).abs() < 1e-12);
        assert_eq!(ks_abs_sup_cdf(f64::INFINITY), 1.0);
    }

    #[test]
    fn cdf_matches_theta_series() {
        // Independent representation: C(λ) = 4/π Σ_j (−1)^j/(2j+1) exp(−(2j+1)²π²/(8λ²)).
        let theta = |l: f64| {
            let mut s = 0.0;
            for j in 0..200 {
                let m = (2 * j + 1) as f64;
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                s += sign / m * (-(m * m) * std::f64::consts::PI.powi(2) / (8.0 * l * l)).exp();
            }
            4.0 / std::f64::consts::PI * s
        };
        for l in [0.3, 0.5, 0.8, 1.0, 1.5, 2.0, 3.0] {
            let a = ks_abs_sup_cdf(l);
            let b = theta(l);
            assert!((a - b).abs() < 1e-12, "λ={l}: {a} vs {b}");
        }
    }

    #[test]
    fn cdf_is_monotone() {
        let mut prev = 0.0;
        for i in 0..=2000 {
            let l = i as f64 * 0.005;
            let c = ks_abs_sup_cdf(l);
            assert!(c >= prev - 1e-12, "λ={l}");
            assert!((0.0..=1.0).contains(&c));
            prev = c;
        }
    }

    #[test]
    fn inverse_round_trips() {
        for p in [0.001, 0.01, 0.05, 0.25, 0.5, 0.9] {
            let l = ks_abs_sup_survival_inverse(p).unwrap();
            assert!((ks_abs_sup_survival(l) - p).abs() < 1e-10, "p={p}");
        }
        assert!(
            ks_abs_sup_survival_inverse(0.01).unwrap() > ks_abs_sup_survival_inverse(0.10).unwrap()
        );
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(ks_abs_sup_survival_inverse(bad).is_err());
        }
    }

    #[test]
    fn sizing_conventions() {
        assert_eq!(SizingConvention::Derived.survival_levels(0.1), (0.1, 0.05));
        let (a, b) = SizingConvention::PaperLiteral.survival_levels(0.01);
        assert!((a - 0.1).abs() < 1e-15 && (b - 0.05).abs() < 1e-15);
    }

    #[test]
    fn borell_values() {
        let b = borell_tail_bound(8.0 * 1.7, 1.7).unwrap();
        assert!((b - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((b - 0.7358).abs() < 1e-4);
        assert!(borell_tail_bound(1e6, 1.0).unwrap() < 1e-100);
        assert_eq!(borell_tail_bound(0.001, 1.0).unwrap(), 1.0);
        assert!(borell_tail_bound(0.0, 1.0).is_err());
        assert!(borell_tail_bound(1.0, -1.0).is_err());
    }

    #[test]
    fn borell_dominates_brownian_tail() {
        let sampler = BrownianMotionSup {
            grid: Grid1D::dyadic(8),
        };
        let m2 = estimate_sup_second_moment(&sampler, 20_000, &SeedSpec::new(21, 0)).unwrap();
        let dist = SupDistribution::simulate(&sampler, 100_000, &SeedSpec::new(21, 1));
        for lambda in [2.0, 4.0, 8.0] {
            let bound = borell_tail_bound(lambda, m2.mean).unwrap();
            let (p, se) = dist.survival(f64::sqrt(lambda));
            assert!(p <= bound + 3.0 * se, "λ={lambda}: tail {p} bound {bound}");
        }
    }

    #[test]
    fn second_moment_estimates() {
        let sampler = BrownianMotionSup {
            grid: Grid1D::dyadic(8),
        };
        let a = estimate_sup_second_moment(&sampler, 20_000, &SeedSpec::new(22, 0)).unwrap();
        let b = estimate_sup_second_moment(&sampler, 20_000, &SeedSpec::new(22, 1)).unwrap();
        let combined = (a.mc_se.powi(2) + b.mc_se.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() < 4.0 * combined);
        let z = estimate_sup_second_moment(&ZeroProcess { resolution: 1 }, 1000, &SeedSpec::default())
            .unwrap();
        assert_eq!(z.mean, 0.0);
        assert!(matches!(
            estimate_sup_second_moment(&sampler, 999, &SeedSpec::default()),
            Err(LawError::TooFewReplications { got: 999, .. })
        ));
    }

    #[test]
    fn second_moment_variance_halves_when_replications_double() {
        let sampler = BrownianMotionSup {
            grid: Grid1D::dyadic(6),
        };
        let batches = 20;
        let spread = |reps: usize, stream: u64| {
            let est: Vec<f64> = (0..batches)
                .map(|b| {
                    estimate_sup_second_moment(&sampler, reps, &SeedSpec::new(23, stream).substream(b))
                        .unwrap()
                        .mean
                })
                .collect();
            let m = est.iter().sum::<f64>() / batches as f64;
            est.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (batches - 1) as f64
        };
        let v1 = spread(2000, 0);
        let v2 = spread(4000, 1);
        let ratio = v1 / v2;
        // F(19, 19) 99.9% band around the expected ratio of 2.
        assert!(ratio > 2.0 / 4.4 && ratio < 2.0 * 4.4, "ratio = {ratio}");
    }

    #[test]
    fn adler_bound_behaviour() {
        assert!(adler_2d_bound(10.0).unwrap() < 1e-6);
        assert!(adler_2d_bound(0.0).is_err());
        let mut prev = f64::INFINITY;
        let mut prev_raw = f64::INFINITY;
        for i in 0..=450 {
            let l = 0.5 + i as f64 * 0.01;
            let b = adler_2d_bound(l).unwrap();
            let raw = adler_2d_series(l);
            assert!(b <= prev + 1e-15, "clipped bound rises at λ={l}");
            assert!(raw <= prev_raw + 1e-15, "series rises at λ={l}");
            prev = b;
            prev_raw = raw;
        }
    }

    #[test]
    fn tail_bound_constructors() {
        let t = TailBound::reflection_sandwich(1.0);
        assert!(t.lower <= t.upper && t.upper <= 1.0);
        assert_eq!(t.upper, 1.0);
        let t = TailBound::reflection_sandwich(2.5);
        assert!((t.upper - 2.0 * t.lower).abs() < 1e-15);
        assert_eq!(TailBound::adler2d(3.0).unwrap().method.as_str(), "adler2d");
    }

    #[test]
    fn sheet_quantile_rejects_small_runs() {
        let s = crate::gp_sim::BrownianSheetSup::dyadic(3);
        assert!(sheet_sup_quantile(0.05, &s, 500, &SeedSpec::default()).is_err());
        assert!(sheet_sup_quantile(1.5, &s, 5000, &SeedSpec::default()).is_err());
    }

    #[test]
    fn variance_measure_scaling() {
        let base = BrownianMotionSup {
            grid: Grid1D::dyadic(7),
        };
        let seed = SeedSpec::new(24, 0);
        let same = variance_measure_sigma2(&base, &base, 2001, &seed).unwrap();
        assert_eq!(same, 1.0);
        let scaled = Scaled {
            inner: base.clone(),
            factor: 1.7,
        };
        let r = variance_measure_sigma2(&scaled, &base, 2001, &seed).unwrap();
        assert!((r - 1.7f64.powi(2)).abs() < 1e-12, "{r}");
        assert_eq!(
            variance_measure_sigma2(&base, &ZeroProcess { resolution: 1 }, 11, &seed),
            Err(LawError::DegenerateBase)
        );
    }

    #[test]
    fn quantile_csv_header() {
        let rows = vec![QuantileRow {
            level: 0.05,
            point: 2.24,
            mc_se: 0.0,
            method: "series".into(),
        }];
        let mut buf = Vec::new();
        write_quantile_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "level,point,mc_se,method\n0.05,2.24,0.0,series\n");
    }
}
