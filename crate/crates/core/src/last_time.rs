//! Tail statistics of error trajectories (`N_ε`, `Q_ε`, `R_ε(a,b)`, `M_ε`),
//! simulation of their limit variables, and asymptotic relative efficiency.
//!
//! Limit variables live on the `s`-parametrisation: for an error sequence
//! `e_n`, put `n = s/ε²` and `Y(s) = ε⁻¹ e_{s/ε²}`. Then
//!
//! ```text
//! ε²N_ε ≈ sup{s : Y(s) > 1}       ε²Q_ε ≈ ∫ I{Y ≥ 1} ds
//! R_ε(a,b) ≈ ∫ I{a ≤ Y ≤ b} ds / ∫ I{Y ≥ 1} ds
//! ε⁻¹M_ε ≈ ∫ Y I{Y ≥ 1} ds / ∫ I{Y ≥ 1} ds
//! ```
//!
//! and for a linear functional `Y(s) = ‖Z(s)‖ / s` with `Z` a Kiefer–Müller
//! process. By time reversal `sup{s : Y(s) > 1}` has the law of
//! `sup_{(0,1]} ‖Z‖²`.

use std::collections::BinaryHeap;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp_sim::{fill_brownian_motion, fill_kiefer_muller, CovMatrix, Grid1D, SimError};
use crate::mc::{self, quantile_se_sorted, quantile_sorted, replicate};
use crate::rng::{SeedSpec, StreamRng};
use crate::survival::{SequentialNelsonAalen, SurvivalModel};

/// Default lower end `l` of the limit integration range.
pub const DEFAULT_LIMIT_LOWER: f64 = 1e-4;
/// Default upper end `s_max` of the limit integration range.
pub const DEFAULT_LIMIT_UPPER: f64 = 50.0;
/// Default number of points on the limit grid.
pub const DEFAULT_LIMIT_POINTS: usize = 1 << 12;
/// Default horizon multiple `c` in `horizon = ceil(c/ε²)`.
pub const DEFAULT_HORIZON_MULTIPLE: f64 = 50.0;
/// Minimum replications for distribution tables.
pub const MIN_REPLICATIONS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LastTimeError {
    #[error("trajectory is empty")]
    Empty,
    #[error("error at n = {n} is {value}; errors must be finite and >= 0")]
    InvalidError { n: usize, value: f64 },
    #[error("trajectories have different horizons ({left} vs {right})")]
    HorizonMismatch { left: usize, right: usize },
    #[error("band [{a}, {b}] needs 1 <= a < b")]
    InvalidBand { a: f64, b: f64 },
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("{got} replications requested, at least {min} required")]
    TooFewReplications { got: usize, min: usize },
    #[error("medians must be positive, got {0}")]
    NonPositiveMedian(f64),
    #[error("limit grid needs 0 < l < s_max and at least two points")]
    InvalidLimitGrid,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Estimator errors `‖θ̂_n − θ‖` for `n = 1..horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTrajectory {
    errors: Vec<f64>,
    norm_label: String,
}

impl ErrorTrajectory {
    pub fn new(errors: Vec<f64>, norm_label: impl Into<String>) -> Result<Self, LastTimeError> {
        if errors.is_empty() {
            return Err(LastTimeError::Empty);
        }
        if let Some((i, v)) = errors
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(LastTimeError::InvalidError { n: i + 1, value: *v });
        }
        Ok(Self {
            errors,
            norm_label: norm_label.into(),
        })
    }

    /// `errors()[n - 1]` is the error after `n` observations.
    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn horizon(&self) -> usize {
        self.errors.len()
    }

    pub fn norm_label(&self) -> &str {
        &self.norm_label
    }
}

/// Largest `n` with `errors[n] > eps` (0 if none), and whether that is the
/// horizon itself.
pub fn last_exceed(traj: &ErrorTrajectory, eps: f64) -> (usize, bool) {
    let n = traj
        .errors
        .iter()
        .rposition(|e| *e > eps)
        .map_or(0, |i| i + 1);
    (n, n == traj.horizon())
}

/// `#{n : errors[n] ≥ eps}`.
pub fn count_exceed(traj: &ErrorTrajectory, eps: f64) -> usize {
    traj.errors.iter().filter(|e| **e >= eps).count()
}

/// `#{n : aε ≤ errors[n] ≤ bε} / #{n : errors[n] ≥ ε}`, `None` when no error
/// reaches `ε`. `b` may be infinite.
pub fn band_ratio(
    traj: &ErrorTrajectory,
    eps: f64,
    a: f64,
    b: f64,
) -> Result<Option<f64>, LastTimeError> {
    check_band(a, b)?;
    let denom = count_exceed(traj, eps);
    if denom == 0 {
        return Ok(None);
    }
    let num = traj
        .errors
        .iter()
        .filter(|e| **e >= a * eps && **e <= b * eps)
        .count();
    Ok(Some(num as f64 / denom as f64))
}

/// Mean of the errors that are `≥ eps`, `None` if there are none.
pub fn mean_exceed(traj: &ErrorTrajectory, eps: f64) -> Option<f64> {
    let (sum, count) = traj
        .errors
        .iter()
        .filter(|e| **e >= eps)
        .fold((0.0, 0usize), |(s, c), e| (s + e, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn check_band(a: f64, b: f64) -> Result<(), LastTimeError> {
    if a >= 1.0 && b > a {
        Ok(())
    } else {
        Err(LastTimeError::InvalidBand { a, b })
    }
}

/// Band ratio for `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRatio {
    pub a: f64,
    pub b: f64,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub epsilon: f64,
    pub n_eps: usize,
    pub q_eps: usize,
    pub r_eps: Vec<BandRatio>,
    pub m_eps: Option<f64>,
    pub censored: bool,
}

pub fn tail_stats(
    traj: &ErrorTrajectory,
    eps: f64,
    bands: &[(f64, f64)],
) -> Result<TailStats, LastTimeError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(LastTimeError::InvalidEpsilon(eps));
    }
    let (n_eps, censored) = last_exceed(traj, eps);
    let r_eps = bands
        .iter()
        .map(|&(a, b)| {
            Ok(BandRatio {
                a,
                b,
                value: band_ratio(traj, eps, a, b)?,
            })
        })
        .collect::<Result<_, LastTimeError>>()?;
    Ok(TailStats {
        epsilon: eps,
        n_eps,
        q_eps: count_exceed(traj, eps),
        r_eps,
        m_eps: mean_exceed(traj, eps),
        censored,
    })
}

/// `(ε²N_ε, ε²Q_ε, ε⁻¹M_ε)` with the censoring flag of `N_ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledStats {
    pub n: f64,
    pub q: f64,
    pub m: Option<f64>,
    pub censored: bool,
}

pub fn scaled_stats(traj: &ErrorTrajectory, eps: f64) -> ScaledStats {
    let (n, censored) = last_exceed(traj, eps);
    scale(eps, n, count_exceed(traj, eps), mean_exceed(traj, eps), censored)
}

fn scale(eps: f64, n: usize, q: usize, m: Option<f64>, censored: bool) -> ScaledStats {
    let e2 = eps * eps;
    ScaledStats {
        n: e2 * n as f64,
        q: e2 * q as f64,
        m: m.map(|m| m / eps),
        censored,
    }
}

/// Pointwise maximum of two trajectories of equal horizon.
pub fn combine_max(
    traj1: &ErrorTrajectory,
    traj2: &ErrorTrajectory,
) -> Result<ErrorTrajectory, LastTimeError> {
    if traj1.horizon() != traj2.horizon() {
        return Err(LastTimeError::HorizonMismatch {
            left: traj1.horizon(),
            right: traj2.horizon(),
        });
    }
    let errors = traj1
        .errors
        .iter()
        .zip(&traj2.errors)
        .map(|(a, b)| a.max(*b))
        .collect();
    Ok(ErrorTrajectory {
        errors,
        norm_label: format!("max({}, {})", traj1.norm_label, traj2.norm_label),
    })
}

/// `(median1 / norm_med1) / (median2 / norm_med2)`.
pub fn asymptotic_relative_efficiency(
    median1: f64,
    median2: f64,
    norm_med1: f64,
    norm_med2: f64,
) -> Result<f64, LastTimeError> {
    for v in [median1, median2, norm_med1, norm_med2] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(LastTimeError::NonPositiveMedian(v));
        }
    }
    Ok((median1 / norm_med1) / (median2 / norm_med2))
}

/// Log-spaced points `l = s_1 < … < s_K = s_max` carrying Riemann weights
/// `s_i − s_{i−1}` (the first point has weight 0).
///
/// Paths are simulated on the unit grid `s/s_max` and rescaled with
/// `W(s_max·u) = √s_max · B(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitGrid {
    unit: Grid1D,
    s_max: f64,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl LimitGrid {
    pub fn new(lower: f64, s_max: f64, points: usize) -> Result<Self, LastTimeError> {
        if !(lower > 0.0 && s_max > lower && s_max.is_finite()) || points < 2 {
            return Err(LastTimeError::InvalidLimitGrid);
        }
        let unit = Grid1D::geometric(lower / s_max, points)?;
        let pts: Vec<f64> = unit.points().iter().map(|u| u * s_max).collect();
        let mut weights = vec![0.0; pts.len()];
        for i in 1..pts.len() {
            weights[i] = pts[i] - pts[i - 1];
        }
        Ok(Self {
            unit,
            s_max,
            points: pts,
            weights,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lower(&self) -> f64 {
        self.points[0]
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }
}

impl Default for LimitGrid {
    fn default() -> Self {
        Self::new(DEFAULT_LIMIT_LOWER, DEFAULT_LIMIT_UPPER, DEFAULT_LIMIT_POINTS)
            .expect("default limit grid is valid")
    }
}

/// Draws `Y(s) = ‖φ̇Z_s‖` on a [`LimitGrid`].
pub trait LimitPathSampler: Sync {
    fn fill(&self, grid: &LimitGrid, rng: &mut StreamRng, out: &mut [f64]);
}

/// Scalar mean with variance `sigma²`: `Y(s) = σ|W(s)|/s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMeanLimit {
    pub sigma: f64,
}

impl LimitPathSampler for ScalarMeanLimit {
    fn fill(&self, grid: &LimitGrid, rng: &mut StreamRng, out: &mut [f64]) {
        fill_brownian_motion(&grid.unit, rng, out);
        let c = self.sigma.abs() * grid.s_max.sqrt();
        for (y, s) in out.iter_mut().zip(&grid.points) {
            *y = c * y.abs() / s;
        }
    }
}

/// Vector of means over a finite class with covariance `cov`, in the sup
/// norm: `Y(s) = max_j |Z(s, f_j)| / s`.
#[derive(Debug, Clone, PartialEq)]
pub struct KieferLimit {
    pub cov: CovMatrix,
}

impl LimitPathSampler for KieferLimit {
    fn fill(&self, grid: &LimitGrid, rng: &mut StreamRng, out: &mut [f64]) {
        let k = self.cov.dim();
        let mut field = vec![0.0; grid.len() * k];
        fill_kiefer_muller(&grid.unit, &self.cov, rng, &mut field, &mut Vec::new());
        let c = grid.s_max.sqrt();
        for (i, (y, s)) in out.iter_mut().zip(&grid.points).enumerate() {
            let row = &field[i * k..(i + 1) * k];
            *y = c * row.iter().fold(0.0f64, |m, v| m.max(v.abs())) / s;
        }
    }
}

/// Per-replicate draws of the scaled statistics. `r[j][i]` is band `j` in
/// replicate `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatDraws {
    pub n: Vec<f64>,
    pub q: Vec<f64>,
    pub m: Vec<Option<f64>>,
    pub bands: Vec<(f64, f64)>,
    pub r: Vec<Vec<Option<f64>>>,
    pub censored: usize,
    pub resolution: usize,
}

struct OneDraw {
    scaled: ScaledStats,
    r: Vec<Option<f64>>,
}

impl StatDraws {
    fn collect(draws: Vec<OneDraw>, bands: &[(f64, f64)], resolution: usize) -> Self {
        let mut out = Self {
            n: Vec::with_capacity(draws.len()),
            q: Vec::with_capacity(draws.len()),
            m: Vec::with_capacity(draws.len()),
            bands: bands.to_vec(),
            r: vec![Vec::with_capacity(draws.len()); bands.len()],
            censored: 0,
            resolution,
        };
        for d in draws {
            out.n.push(d.scaled.n);
            out.q.push(d.scaled.q);
            out.m.push(d.scaled.m);
            out.censored += d.scaled.censored as usize;
            for (col, v) in out.r.iter_mut().zip(d.r) {
                col.push(v);
            }
        }
        out
    }

    pub fn replications(&self) -> usize {
        self.n.len()
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.replications().max(1) as f64
    }

    /// Summary rows: `N`, `Q`, `M`, then one `R` row per band.
    pub fn table(&self) -> DistributionTable {
        let cf = self.censored_fraction();
        let mut rows = vec![
            DistributionRow::from_values("N", None, &self.n, cf),
            DistributionRow::from_values("Q", None, &self.q, cf),
            DistributionRow::from_values("M", None, &defined(&self.m), cf),
        ];
        for (band, col) in self.bands.iter().zip(&self.r) {
            rows.push(DistributionRow::from_values("R", Some(*band), &defined(col), cf));
        }
        DistributionTable {
            rows,
            replications: self.replications(),
            resolution: self.resolution,
        }
    }
}

fn defined(values: &[Option<f64>]) -> Vec<f64> {
    values.iter().flatten().copied().collect()
}

/// Quantiles `(0.05, 0.5, 0.95)` of one statistic. `mc_se` is the standard
/// error of the median; `reps` counts replicates where it was defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub statistic: String,
    pub band_a: Option<f64>,
    pub band_b: Option<f64>,
    pub q05: Option<f64>,
    pub q50: Option<f64>,
    pub q95: Option<f64>,
    pub mc_se: Option<f64>,
    pub reps: usize,
    pub censored_fraction: f64,
}

impl DistributionRow {
    fn from_values(statistic: &str, band: Option<(f64, f64)>, values: &[f64], cf: f64) -> Self {
        let mut sorted = values.to_vec();
        mc::sort_floats(&mut sorted);
        let q = |p| (!sorted.is_empty()).then(|| quantile_sorted(&sorted, p));
        Self {
            statistic: statistic.to_string(),
            band_a: band.map(|b| b.0),
            band_b: band.map(|b| b.1),
            q05: q(0.05),
            q50: q(0.5),
            q95: q(0.95),
            mc_se: (!sorted.is_empty()).then(|| quantile_se_sorted(&sorted, 0.5)),
            reps: sorted.len(),
            censored_fraction: cf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionTable {
    pub rows: Vec<DistributionRow>,
    pub replications: usize,
    pub resolution: usize,
}

impl DistributionTable {
    pub fn find(&self, statistic: &str, band: Option<(f64, f64)>) -> Option<&DistributionRow> {
        self.rows.iter().find(|r| {
            r.statistic == statistic
                && match band {
                    None => r.band_a.is_none(),
                    Some((a, b)) => r.band_a == Some(a) && r.band_b == Some(b),
                }
        })
    }

    /// CSV with header
    /// `statistic,band_a,band_b,q05,q50,q95,mc_se,reps,censored_fraction`;
    /// empty fields mark undefined values.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_reps(reps: usize) -> Result<(), LastTimeError> {
    if reps < MIN_REPLICATIONS {
        Err(LastTimeError::TooFewReplications {
            got: reps,
            min: MIN_REPLICATIONS,
        })
    } else {
        Ok(())
    }
}

fn limit_draw(y: &[f64], grid: &LimitGrid, bands: &[(f64, f64)]) -> OneDraw {
    let last = y.iter().rposition(|v| *v > 1.0);
    let n = last.map_or(0.0, |i| grid.points[i]);
    let censored = last == Some(y.len() - 1);
    let mut q = 0.0;
    let mut mass = 0.0;
    for (v, w) in y.iter().zip(&grid.weights) {
        if *v >= 1.0 {
            q += w;
            mass += w * v;
        }
    }
    let r = bands
        .iter()
        .map(|&(a, b)| {
            (q > 0.0).then(|| {
                y.iter()
                    .zip(&grid.weights)
                    .filter(|(v, _)| **v >= a && **v <= b)
                    .map(|(_, w)| w)
                    .sum::<f64>()
                    / q
            })
        })
        .collect();
    OneDraw {
        scaled: ScaledStats {
            n,
            q,
            m: (q > 0.0).then(|| mass / q),
            censored,
        },
        r,
    }
}

/// Draws of the limit variables of `ε²N_ε`, `ε²Q_ε`, `ε⁻¹M_ε` and
/// `R_ε(a,b)` for each band.
pub fn simulate_limit_draws<S: LimitPathSampler + ?Sized>(
    sampler: &S,
    grid: &LimitGrid,
    reps: usize,
    seed: &SeedSpec,
    bands: &[(f64, f64)],
) -> Result<StatDraws, LastTimeError> {
    check_reps(reps)?;
    for &(a, b) in bands {
        check_band(a, b)?;
    }
    let draws = replicate(seed, reps, |_, rng| {
        let mut y = vec![0.0; grid.len()];
        sampler.fill(grid, rng, &mut y);
        limit_draw(&y, grid, bands)
    });
    Ok(StatDraws::collect(draws, bands, grid.len()))
}

pub fn simulate_limit_stats<S: LimitPathSampler + ?Sized>(
    sampler: &S,
    grid: &LimitGrid,
    reps: usize,
    seed: &SeedSpec,
    bands: &[(f64, f64)],
) -> Result<DistributionTable, LastTimeError> {
    Ok(simulate_limit_draws(sampler, grid, reps, seed, bands)?.table())
}

/// Quantile curve of the limit of `R_ε(1, b)` over `b_grid`: one `R` row per
/// `b`, all from the same paths.
pub fn figure_r_curve<S: LimitPathSampler + ?Sized>(
    sampler: &S,
    grid: &LimitGrid,
    reps: usize,
    seed: &SeedSpec,
    b_grid: &[f64],
) -> Result<DistributionTable, LastTimeError> {
    let bands: Vec<(f64, f64)> = b_grid.iter().map(|b| (1.0, *b)).collect();
    let mut table = simulate_limit_stats(sampler, grid, reps, seed, &bands)?;
    table.rows.retain(|r| r.statistic == "R");
    Ok(table)
}

/// Default `b` grid for the `R(1, b)` curve: 1.05 to 3.00 in steps of 0.01.
pub fn default_b_grid() -> Vec<f64> {
    (105..=300).map(|i| i as f64 / 100.0).collect()
}

/// Data law for scalar estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalarLaw {
    /// Uniform(−1/2, 1/2).
    CenteredUniform,
    StandardNormal,
    /// Exponential with rate 1.
    Exponential,
}

impl ScalarLaw {
    pub fn sample(self, rng: &mut StreamRng) -> f64 {
        match self {
            Self::CenteredUniform => rng.random::<f64>() - 0.5,
            Self::StandardNormal => rng.sample(StandardNormal),
            Self::Exponential => -(1.0 - rng.random::<f64>()).ln(),
        }
    }

    pub fn mean(self) -> f64 {
        match self {
            Self::CenteredUniform | Self::StandardNormal => 0.0,
            Self::Exponential => 1.0,
        }
    }

    pub fn median(self) -> f64 {
        match self {
            Self::CenteredUniform | Self::StandardNormal => 0.0,
            Self::Exponential => std::f64::consts::LN_2,
        }
    }

    pub fn variance(self) -> f64 {
        match self {
            Self::CenteredUniform => 1.0 / 12.0,
            Self::StandardNormal | Self::Exponential => 1.0,
        }
    }

    /// Density at the median.
    pub fn median_density(self) -> f64 {
        match self {
            Self::CenteredUniform => 1.0,
            Self::StandardNormal => 1.0 / (2.0 * std::f64::consts::PI).sqrt(),
            Self::Exponential => 0.5,
        }
    }
}

/// Estimator whose error trajectory is simulated.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryModel {
    /// Sample mean; error `|X̄_n − μ|`.
    Mean(ScalarLaw),
    /// Sample median; error `|med_n − m|`.
    Median(ScalarLaw),
    /// Empirical CDF of Uniform(0,1) data in the sup norm over the points
    /// `j/(points+1)`, `j = 1..points`.
    EcdfSup { points: usize },
    /// Nelson–Aalen estimator in the sup norm over `[0, tau]`.
    NelsonAalen { model: SurvivalModel, tau: f64 },
}

impl TrajectoryModel {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Mean(_) => "mean",
            Self::Median(_) => "median",
            Self::EcdfSup { .. } => "ecdf-sup",
            Self::NelsonAalen { .. } => "nelson-aalen",
        }
    }

    pub fn simulate(&self, horizon: usize, rng: &mut StreamRng) -> ErrorTrajectory {
        let errors = match self {
            Self::Mean(law) => mean_errors(*law, horizon, rng),
            Self::Median(law) => median_errors(*law, horizon, rng),
            Self::EcdfSup { points } => ecdf_errors(*points, horizon, rng),
            Self::NelsonAalen { model, tau } => {
                let mut na = SequentialNelsonAalen::new(*tau);
                (0..horizon)
                    .map(|_| {
                        let (z, d) = model.sample(rng);
                        na.push(z, d);
                        na.sup_error(|t| model.cumulative_hazard(t))
                    })
                    .collect()
            }
        };
        ErrorTrajectory {
            errors,
            norm_label: self.label().to_string(),
        }
    }

    /// The matching limit sampler, when the estimator is asymptotically a
    /// mean over a finite class.
    pub fn limit_sampler(&self) -> Option<Box<dyn LimitPathSampler>> {
        match self {
            Self::Mean(law) => Some(Box::new(ScalarMeanLimit {
                sigma: law.variance().sqrt(),
            })),
            Self::Median(law) => Some(Box::new(ScalarMeanLimit {
                sigma: 0.5 / law.median_density(),
            })),
            Self::EcdfSup { points } => {
                let x = ecdf_points(*points);
                let rows = x
                    .iter()
                    .map(|a| x.iter().map(|b| a.min(*b) - a * b).collect())
                    .collect();
                CovMatrix::new(rows)
                    .ok()
                    .map(|cov| Box::new(KieferLimit { cov }) as Box<dyn LimitPathSampler>)
            }
            Self::NelsonAalen { .. } => None,
        }
    }
}

fn mean_errors(law: ScalarLaw, horizon: usize, rng: &mut StreamRng) -> Vec<f64> {
    let mu = law.mean();
    let mut sum = 0.0;
    (1..=horizon)
        .map(|n| {
            sum += law.sample(rng) - mu;
            (sum / n as f64).abs()
        })
        .collect()
}

/// Running median with a max-heap for the lower half and a min-heap for the
/// upper half.
#[derive(Debug, Default)]
struct RunningMedian {
    lower: BinaryHeap<Ordered>,
    upper: BinaryHeap<std::cmp::Reverse<Ordered>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ordered(f64);

impl Eq for Ordered {}

impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl RunningMedian {
    fn push(&mut self, x: f64) {
        match self.lower.peek() {
            Some(top) if x > top.0 => self.upper.push(std::cmp::Reverse(Ordered(x))),
            _ => self.lower.push(Ordered(x)),
        }
        if self.lower.len() > self.upper.len() + 1 {
            let v = self.lower.pop().expect("non-empty");
            self.upper.push(std::cmp::Reverse(v));
        } else if self.upper.len() > self.lower.len() {
            let v = self.upper.pop().expect("non-empty").0;
            self.lower.push(v);
        }
    }

    fn median(&self) -> f64 {
        let lo = self.lower.peek().expect("median of empty sample").0;
        if self.lower.len() > self.upper.len() {
            lo
        } else {
            0.5 * (lo + self.upper.peek().expect("balanced heaps").0 .0)
        }
    }
}

fn median_errors(law: ScalarLaw, horizon: usize, rng: &mut StreamRng) -> Vec<f64> {
    let m = law.median();
    let mut rm = RunningMedian::default();
    (0..horizon)
        .map(|_| {
            rm.push(law.sample(rng));
            (rm.median() - m).abs()
        })
        .collect()
}

fn ecdf_points(points: usize) -> Vec<f64> {
    (1..=points).map(|j| j as f64 / (points + 1) as f64).collect()
}

fn ecdf_errors(points: usize, horizon: usize, rng: &mut StreamRng) -> Vec<f64> {
    let x = ecdf_points(points);
    // counts[j] = #{X_i ≤ x_j}, maintained through the bin of each draw.
    let mut counts = vec![0usize; points];
    (1..=horizon)
        .map(|n| {
            let u: f64 = rng.random();
            let first = x.partition_point(|xj| *xj < u);
            for c in &mut counts[first..] {
                *c += 1;
            }
            let nf = n as f64;
            counts
                .iter()
                .zip(&x)
                .fold(0.0f64, |m, (c, xj)| m.max((*c as f64 / nf - xj).abs()))
        })
        .collect()
}

/// `ceil(c / ε²)`.
pub fn horizon_for(eps: f64, multiple: f64) -> Result<usize, LastTimeError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(LastTimeError::InvalidEpsilon(eps));
    }
    Ok((multiple / (eps * eps)).ceil() as usize)
}

/// Simulated trajectories of `model` to `horizon_for(eps, horizon_multiple)`,
/// summarised as scaled statistics.
pub fn simulate_trajectory_draws(
    model: &TrajectoryModel,
    eps: f64,
    horizon_multiple: f64,
    reps: usize,
    seed: &SeedSpec,
    bands: &[(f64, f64)],
) -> Result<StatDraws, LastTimeError> {
    let horizon = horizon_for(eps, horizon_multiple)?;
    for &(a, b) in bands {
        check_band(a, b)?;
    }
    if reps == 0 {
        return Err(LastTimeError::TooFewReplications { got: 0, min: 1 });
    }
    let draws = replicate(seed, reps, |_, rng| {
        let traj = model.simulate(horizon, rng);
        let r = bands
            .iter()
            .map(|&(a, b)| band_ratio(&traj, eps, a, b).expect("bands checked"))
            .collect();
        OneDraw {
            scaled: scaled_stats(&traj, eps),
            r,
        }
    });
    Ok(StatDraws::collect(draws, bands, horizon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit_laws::ks_abs_sup_survival_inverse;
    use proptest::prelude::*;
    use rand::Rng;

    fn traj(v: &[f64]) -> ErrorTrajectory {
        ErrorTrajectory::new(v.to_vec(), "test").unwrap()
    }

    #[test]
    fn trajectory_validation() {
        assert_eq!(ErrorTrajectory::new(vec![], "x"), Err(LastTimeError::Empty));
        assert_eq!(
            ErrorTrajectory::new(vec![0.1, -0.2], "x"),
            Err(LastTimeError::InvalidError { n: 2, value: -0.2 })
        );
        assert!(ErrorTrajectory::new(vec![f64::NAN], "x").is_err());
    }

    #[test]
    fn last_exceed_examples() {
        let t = traj(&[0.5, 0.3, 0.05, 0.2, 0.01]);
        assert_eq!(last_exceed(&t, 0.1), (4, false));
        assert_eq!(last_exceed(&t, 0.6), (0, false));
        assert_eq!(last_exceed(&traj(&[0.5, 0.3, 0.2]), 0.1), (3, true));
        // Ties do not count for N.
        assert_eq!(last_exceed(&traj(&[0.2, 0.1]), 0.1), (1, false));
    }

    #[test]
    fn count_and_band_examples() {
        let t = traj(&[0.5, 0.3, 0.05, 0.2, 0.01]);
        assert_eq!(count_exceed(&t, 0.2), 3);
        assert_eq!(count_exceed(&t, 0.9), 0);
        let t = traj(&[0.15, 0.25, 0.05]);
        assert_eq!(band_ratio(&t, 0.1, 1.0, 2.0).unwrap(), Some(0.5));
        let t = traj(&[0.15, 0.2, 0.05]);
        assert_eq!(band_ratio(&t, 0.1, 1.0, 2.0).unwrap(), Some(1.0));
        assert_eq!(band_ratio(&traj(&[0.01]), 0.1, 1.0, 2.0).unwrap(), None);
        assert!(band_ratio(&t, 0.1, 0.5, 2.0).is_err());
        assert!(band_ratio(&t, 0.1, 2.0, 2.0).is_err());
        assert_eq!(band_ratio(&t, 0.1, 1.0, f64::INFINITY).unwrap(), Some(1.0));
    }

    #[test]
    fn mean_exceed_examples() {
        let m = mean_exceed(&traj(&[0.3, 0.1, 0.02]), 0.1).unwrap();
        assert!((m - 0.2).abs() < 1e-15);
        assert_eq!(mean_exceed(&traj(&[0.5, 0.01]), 0.1), Some(0.5));
        assert_eq!(mean_exceed(&traj(&[0.01]), 0.1), None);
    }

    #[test]
    fn scaling_examples() {
        let mut e = vec![0.0; 400];
        e[399] = 0.06;
        let s = scaled_stats(&traj(&e), 0.05);
        assert!((s.n - 1.0).abs() < 1e-12);
        assert!(s.censored);
        let s = scaled_stats(&traj(&[0.01, 0.02]), 0.05);
        assert_eq!(s.q, 0.0);
        assert_eq!(s.m, None);
        let s = scaled_stats(&traj(&[0.2, 0.01]), 0.1);
        assert!((s.m.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tail_stats_bundle() {
        let t = traj(&[0.5, 0.3, 0.05, 0.2, 0.01]);
        let s = tail_stats(&t, 0.2, &[(1.0, 2.0)]).unwrap();
        assert_eq!((s.n_eps, s.q_eps, s.censored), (2, 3, false));
        assert_eq!(s.r_eps[0].value, Some(2.0 / 3.0));
        assert!(tail_stats(&t, 0.0, &[]).is_err());
    }

    #[test]
    fn combine_examples() {
        let a = traj(&[0.3, 0.1, 0.4]);
        let zero = traj(&[0.0, 0.0, 0.0]);
        assert_eq!(combine_max(&a, &zero).unwrap().errors(), a.errors());
        assert!(combine_max(&a, &traj(&[0.1])).is_err());
    }

    #[test]
    fn are_examples() {
        assert_eq!(asymptotic_relative_efficiency(2.0, 2.0, 3.0, 3.0).unwrap(), 1.0);
        let r = asymptotic_relative_efficiency(3.0, 2.0, 1.7, 1.7).unwrap();
        assert!((r - 1.5).abs() < 1e-15);
        assert!(asymptotic_relative_efficiency(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn running_median_matches_sort() {
        let mut rng = SeedSpec::new(5, 0).rng();
        let mut rm = RunningMedian::default();
        let mut all = Vec::new();
        for _ in 0..301 {
            let x: f64 = rng.random();
            rm.push(x);
            all.push(x);
            let mut s = all.clone();
            mc::sort_floats(&mut s);
            let n = s.len();
            let expect = if n % 2 == 1 {
                s[n / 2]
            } else {
                0.5 * (s[n / 2 - 1] + s[n / 2])
            };
            assert_eq!(rm.median(), expect);
        }
    }

    #[test]
    fn ecdf_errors_match_direct_computation() {
        let seed = SeedSpec::new(6, 0);
        let errs = ecdf_errors(7, 50, &mut seed.rng());
        let mut rng = seed.rng();
        let x = ecdf_points(7);
        let mut data = Vec::new();
        for e in errs {
            data.push(rng.random::<f64>());
            let n = data.len() as f64;
            let direct = x.iter().fold(0.0f64, |m, xj| {
                let f = data.iter().filter(|d| **d <= *xj).count() as f64 / n;
                m.max((f - xj).abs())
            });
            assert!((e - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn limit_grid_layout() {
        let g = LimitGrid::default();
        assert_eq!(g.len(), DEFAULT_LIMIT_POINTS);
        assert!((g.lower() - 1e-4).abs() < 1e-15);
        assert_eq!(*g.points().last().unwrap(), 50.0);
        let total: f64 = g.weights().iter().sum();
        assert!((total - (50.0 - 1e-4)).abs() < 1e-9);
        assert!(LimitGrid::new(1.0, 0.5, 10).is_err());
        assert!(LimitGrid::new(1e-3, 5.0, 1).is_err());
    }

    #[test]
    fn limit_n_matches_squared_sup_quantiles() {
        let sigma: f64 = 0.7;
        let draws = simulate_limit_draws(
            &ScalarMeanLimit { sigma },
            &LimitGrid::default(),
            4000,
            &SeedSpec::new(31, 0),
            &[],
        )
        .unwrap();
        let mut n = draws.n.clone();
        mc::sort_floats(&mut n);
        for p in [0.25, 0.5, 0.75] {
            let b = ks_abs_sup_survival_inverse(1.0 - p).unwrap();
            let expect = sigma * sigma * b * b;
            let got = quantile_sorted(&n, p);
            let tol = 4.0 * quantile_se_sorted(&n, p) + 0.02 * expect;
            assert!((got - expect).abs() < tol, "p={p}: {got} vs {expect}");
        }
        assert!(draws.censored_fraction() < 0.01);
    }

    #[test]
    fn r_medians_nondecreasing_in_b() {
        let table = figure_r_curve(
            &ScalarMeanLimit { sigma: 1.0 },
            &LimitGrid::new(1e-4, 50.0, 1024).unwrap(),
            1000,
            &SeedSpec::new(32, 0),
            &[1.1, 1.3, 1.53, 2.0, 3.0, f64::INFINITY],
        )
        .unwrap();
        let med: Vec<f64> = table.rows.iter().map(|r| r.q50.unwrap()).collect();
        assert!(med.windows(2).all(|w| w[0] <= w[1]), "{med:?}");
        assert!((med.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn limit_stats_reject_small_runs_and_bad_bands() {
        let s = ScalarMeanLimit { sigma: 1.0 };
        let g = LimitGrid::new(1e-3, 10.0, 64).unwrap();
        assert!(simulate_limit_stats(&s, &g, 999, &SeedSpec::default(), &[]).is_err());
        assert!(simulate_limit_stats(&s, &g, 1000, &SeedSpec::default(), &[(0.5, 2.0)]).is_err());
    }

    #[test]
    fn distribution_csv_columns() {
        let s = ScalarMeanLimit { sigma: 1.0 };
        let g = LimitGrid::new(1e-3, 10.0, 64).unwrap();
        let t = simulate_limit_stats(&s, &g, 1000, &SeedSpec::default(), &[(1.0, 2.0)]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "statistic,band_a,band_b,q05,q50,q95,mc_se,reps,censored_fraction\nN,,,"
        ));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn kiefer_limit_with_unit_cov_matches_scalar_mean() {
        let g = LimitGrid::new(1e-3, 20.0, 256).unwrap();
        let seed = SeedSpec::new(33, 0);
        let cov = CovMatrix::new(vec![vec![1.0]]).unwrap();
        let a = simulate_limit_draws(&KieferLimit { cov }, &g, 1000, &seed, &[]).unwrap();
        let b = simulate_limit_draws(&ScalarMeanLimit { sigma: 1.0 }, &g, 1000, &seed, &[]).unwrap();
        for (x, y) in a.n.iter().zip(&b.n) {
            assert!((x - y).abs() <= 1e-9 * y.max(1.0));
        }
    }

    #[test]
    fn median_trajectory_limit_scale() {
        let m = TrajectoryModel::Median(ScalarLaw::StandardNormal);
        let t = m.simulate(20_000, &mut SeedSpec::new(34, 0).rng());
        assert!(t.errors()[19_999] < 0.05);
        assert_eq!(t.norm_label(), "median");
    }

    fn arb_traj() -> impl Strategy<Value = ErrorTrajectory> {
        prop::collection::vec(0.0f64..1.0, 1..60)
            .prop_map(|v| ErrorTrajectory::new(v, "p").unwrap())
    }

    proptest! {
        #[test]
        fn tail_stats_monotone_in_eps(t in arb_traj(), e1 in 0.001f64..1.0, e2 in 0.001f64..1.0) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(last_exceed(&t, hi).0 <= last_exceed(&t, lo).0);
            prop_assert!(count_exceed(&t, hi) <= count_exceed(&t, lo));
        }

        #[test]
        fn count_matches_loop(t in arb_traj(), eps in 0.001f64..1.0) {
            let mut c = 0;
            for n in 0..t.horizon() {
                if t.errors()[n] >= eps { c += 1; }
            }
            prop_assert_eq!(count_exceed(&t, eps), c);
        }

        #[test]
        fn count_bounded_by_last_weak_exceedance(t in arb_traj(), eps in 0.001f64..1.0) {
            let last_weak = t.errors().iter().rposition(|e| *e >= eps).map_or(0, |i| i + 1);
            prop_assert!(count_exceed(&t, eps) <= last_weak);
        }

        #[test]
        fn mean_exceed_at_least_eps(t in arb_traj(), eps in 0.001f64..1.0) {
            if let Some(m) = mean_exceed(&t, eps) {
                prop_assert!(m >= eps);
            }
        }

        #[test]
        fn full_band_is_one(t in arb_traj(), eps in 0.001f64..1.0) {
            if let Some(r) = band_ratio(&t, eps, 1.0, f64::INFINITY).unwrap() {
                prop_assert_eq!(r, 1.0);
            }
        }

        #[test]
        fn combine_is_commutative_and_dominates(
            v in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..60),
            eps in 0.001f64..1.0,
        ) {
            let a = ErrorTrajectory::new(v.iter().map(|p| p.0).collect(), "a").unwrap();
            let b = ErrorTrajectory::new(v.iter().map(|p| p.1).collect(), "b").unwrap();
            let ab = combine_max(&a, &b).unwrap();
            let ba = combine_max(&b, &a).unwrap();
            prop_assert_eq!(ab.errors(), ba.errors());
            let both = last_exceed(&a, eps).0.max(last_exceed(&b, eps).0);
            prop_assert!(last_exceed(&ab, eps).0 >= both);
        }
    }
}
