//! Nelson–Aalen estimation from right-censored data, the plug-in variance
//! `σ²(τ)`, and sizing of sequential simultaneous confidence bands.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::limit_laws::{scaled_size, LawError, SizingConvention};
use crate::mc::replicate;
use crate::rng::SeedSpec;
use crate::rng::StreamRng;

/// Minimum replications for coverage studies.
pub const MIN_COVERAGE_REPLICATIONS: usize = 500;
/// Default coverage horizon as a multiple of the recommended `m`.
pub const DEFAULT_COVERAGE_HORIZON: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error("sample has no records")]
    Empty,
    #[error("record {index}: time {value} must be finite and >= 0")]
    InvalidTime { index: usize, value: f64 },
    #[error("tau must be positive and finite, got {0}")]
    InvalidTau(f64),
    #[error("no record has time <= tau = {0}")]
    NothingBeforeTau(f64),
    #[error("risk set is empty at time {0}")]
    EmptyRiskSet(f64),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("{got} replications requested, at least {min} required")]
    TooFewReplications { got: usize, min: usize },
    #[error("coverage start {start} must lie in 1..=horizon ({horizon})")]
    InvalidStart { start: usize, horizon: usize },
    #[error(transparent)]
    Law(#[from] LawError),
}

/// Right-censored observations `(z_i, δ_i)` and an analysis horizon `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoredSample {
    records: Vec<(f64, bool)>,
    tau: f64,
}

impl CensoredSample {
    pub fn new(records: Vec<(f64, bool)>, tau: f64) -> Result<Self, SurvivalError> {
        if records.is_empty() {
            return Err(SurvivalError::Empty);
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(SurvivalError::InvalidTau(tau));
        }
        for (index, &(z, _)) in records.iter().enumerate() {
            if !(z >= 0.0 && z.is_finite()) {
                return Err(SurvivalError::InvalidTime { index, value: z });
            }
        }
        if !records.iter().any(|r| r.0 <= tau) {
            return Err(SurvivalError::NothingBeforeTau(tau));
        }
        Ok(Self { records, tau })
    }

    /// Parse CSV with header `time,event`. With `tau = None` the largest
    /// observed time is used.
    pub fn from_csv<R: Read>(input: R, tau: Option<f64>) -> Result<Self, SurvivalError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = reader.headers().map_err(|e| SurvivalError::Csv {
            line: 1,
            message: e.to_string(),
        })?;
        if header.len() != 2 || &header[0] != "time" || &header[1] != "event" {
            return Err(SurvivalError::Csv {
                line: 1,
                message: format!("expected header `time,event`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut records = Vec::new();
        for result in reader.records() {
            let record = result.map_err(|e| SurvivalError::Csv {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let bad = |message: String| SurvivalError::Csv { line, message };
            let z: f64 = record[0]
                .parse()
                .map_err(|_| bad(format!("time `{}` is not a number", &record[0])))?;
            if !(z >= 0.0 && z.is_finite()) {
                return Err(bad(format!("time {z} must be finite and >= 0")));
            }
            let d = match &record[1] {
                "0" => false,
                "1" => true,
                other => return Err(bad(format!("event `{other}` must be 0 or 1"))),
            };
            records.push((z, d));
        }
        if records.is_empty() {
            return Err(SurvivalError::Empty);
        }
        let tau = tau.unwrap_or_else(|| records.iter().fold(0.0f64, |m, r| m.max(r.0)));
        Self::new(records, tau)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "event"])?;
        for &(z, d) in &self.records {
            w.write_record([z.to_string(), (d as u8).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn records(&self) -> &[(f64, bool)] {
        &self.records
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `Y(t) = #{z_i ≥ t}`.
    pub fn at_risk(&self, t: f64) -> usize {
        self.records.iter().filter(|r| r.0 >= t).count()
    }

    /// Fails when nobody is at risk at `tau`.
    pub fn check_tau_supported(&self) -> Result<(), SurvivalError> {
        if self.at_risk(self.tau) == 0 {
            Err(SurvivalError::EmptyRiskSet(self.tau))
        } else {
            Ok(())
        }
    }

    /// Distinct event times `≤ limit` with event counts `d` and risk-set
    /// sizes `Y`.
    fn event_table(&self, limit: f64) -> Result<Vec<(f64, usize, usize)>, SurvivalError> {
        let mut sorted = self.records.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = sorted.len();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n && sorted[i].0 <= limit {
            let t = sorted[i].0;
            let mut j = i;
            let mut d = 0;
            while j < n && sorted[j].0 == t {
                d += sorted[j].1 as usize;
                j += 1;
            }
            if d > 0 {
                let y = n - i;
                if y == 0 {
                    return Err(SurvivalError::EmptyRiskSet(t));
                }
                out.push((t, d, y));
            }
            i = j;
        }
        Ok(out)
    }
}

/// Right-continuous step function `Λ̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardCurve {
    pub jump_times: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl HazardCurve {
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|s| *s <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// CSV with header `t,lambda_hat`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "lambda_hat"])?;
        for (t, l) in self.jump_times.iter().zip(&self.cumulative) {
            w.write_record([t.to_string(), l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `Λ̂(t) = Σ_{z ≤ t} d(z)/Y(z)` over event times up to `tau`, ties
/// aggregated.
pub fn nelson_aalen(sample: &CensoredSample) -> Result<HazardCurve, SurvivalError> {
    let table = sample.event_table(sample.tau)?;
    let mut cum = 0.0;
    let mut curve = HazardCurve {
        jump_times: Vec::with_capacity(table.len()),
        cumulative: Vec::with_capacity(table.len()),
    };
    for (t, d, y) in table {
        cum += d as f64 / y as f64;
        curve.jump_times.push(t);
        curve.cumulative.push(cum);
    }
    Ok(curve)
}

/// Plug-in `σ̂²(τ) = n Σ_{z ≤ τ} (1 − d/Y) d/Y²`, the population integral
/// `∫ (1 − ΔΛ)/P(Z ≥ z) dΛ` with `P(Z ≥ z)` estimated by `Y(z)/n`.
pub fn sigma2_hat(sample: &CensoredSample, tau: f64) -> Result<f64, SurvivalError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SurvivalError::InvalidTau(tau));
    }
    let n = sample.len() as f64;
    let sum: f64 = sample
        .event_table(tau)?
        .into_iter()
        .map(|(_, d, y)| {
            let (d, y) = (d as f64, y as f64);
            (1.0 - d / y) * d / (y * y)
        })
        .sum();
    Ok(n * sum)
}

/// Half-width, level and sample-size bracket of a sequential band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub eps0: f64,
    pub alpha: f64,
    pub m_low: u64,
    pub m_high: u64,
    pub sigma2: f64,
    pub convention: SizingConvention,
}

impl BandSpec {
    pub fn recommended_m(&self) -> u64 {
        self.m_high
    }
}

/// `m_low = ⌈σ²S⁻¹(p_low)²/ε₀²⌉`, `m_high = ⌊σ²S⁻¹(p_high)²/ε₀²⌋ + 1` with
/// survival levels from `convention`.
pub fn band_size(
    sigma2: f64,
    eps0: f64,
    alpha: f64,
    convention: SizingConvention,
) -> Result<BandSpec, SurvivalError> {
    let (p_low, p_high) = convention.survival_levels(alpha);
    let low = scaled_size(sigma2, eps0, p_low)?;
    let high = scaled_size(sigma2, eps0, p_high)?;
    Ok(BandSpec {
        eps0,
        alpha,
        m_low: (low.ceil() as u64).max(1),
        m_high: high.floor() as u64 + 1,
        sigma2,
        convention,
    })
}

/// JSON band report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub sigma2: f64,
    pub m_low: u64,
    pub m_high: u64,
    pub recommended_m: u64,
    pub eps0: f64,
    pub alpha: f64,
    pub tau: f64,
    pub n: usize,
    pub convention: SizingConvention,
}

/// Estimate `σ²(τ)` from `sample` and size the band.
pub fn band_report(
    sample: &CensoredSample,
    eps0: f64,
    alpha: f64,
    convention: SizingConvention,
) -> Result<BandReport, SurvivalError> {
    sample.check_tau_supported()?;
    let sigma2 = sigma2_hat(sample, sample.tau)?;
    let band = band_size(sigma2, eps0, alpha, convention)?;
    Ok(BandReport {
        sigma2,
        m_low: band.m_low,
        m_high: band.m_high,
        recommended_m: band.recommended_m(),
        eps0,
        alpha,
        tau: sample.tau,
        n: sample.len(),
        convention,
    })
}

/// Exponential lifetimes with rate `hazard_rate`, censored by an independent
/// Uniform(0, `censor_max`) time (no censoring when `censor_max` is
/// infinite).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalModel {
    pub hazard_rate: f64,
    pub censor_max: f64,
}

impl Default for SurvivalModel {
    fn default() -> Self {
        Self {
            hazard_rate: 1.0,
            censor_max: 3.0,
        }
    }
}

impl SurvivalModel {
    pub fn sample(&self, rng: &mut StreamRng) -> (f64, bool) {
        let y = -(1.0 - rng.random::<f64>()).ln() / self.hazard_rate;
        if self.censor_max.is_finite() {
            let c = self.censor_max * rng.random::<f64>();
            if c < y {
                return (c, false);
            }
        }
        (y, true)
    }

    pub fn sample_n(&self, n: usize, tau: f64, rng: &mut StreamRng) -> Result<CensoredSample, SurvivalError> {
        CensoredSample::new((0..n).map(|_| self.sample(rng)).collect(), tau)
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        self.hazard_rate * t
    }

    /// `P(Z ≥ z)`.
    pub fn at_risk_probability(&self, z: f64) -> f64 {
        let surv = (-self.hazard_rate * z).exp();
        if self.censor_max.is_finite() {
            surv * (1.0 - z / self.censor_max).max(0.0)
        } else {
            surv
        }
    }

    /// `σ²(τ) = ∫₀^τ λ / P(Z ≥ z) dz` by composite Simpson on 2000 panels.
    pub fn sigma2(&self, tau: f64) -> f64 {
        let f = |z: f64| self.hazard_rate / self.at_risk_probability(z);
        let panels = 2000;
        let h = tau / panels as f64;
        let mut s = f(0.0) + f(tau);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        s * h / 3.0
    }
}

/// Nelson–Aalen estimator updated one observation at a time, tracking
/// `sup_{t ≤ τ} |Λ̂_n(t) − Λ(t)|`.
#[derive(Debug, Clone)]
pub struct SequentialNelsonAalen {
    tau: f64,
    /// Records with `z ≤ tau`, sorted by time.
    early: Vec<(f64, bool)>,
    n: usize,
}

impl SequentialNelsonAalen {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            early: Vec::new(),
            n: 0,
        }
    }

    pub fn push(&mut self, z: f64, event: bool) {
        self.n += 1;
        if z <= self.tau {
            let at = self.early.partition_point(|r| r.0 <= z);
            self.early.insert(at, (z, event));
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `sup_{t ≤ τ} |Λ̂(t) − Λ(t)|` for a continuous nondecreasing `Λ` with
    /// `Λ(0) = 0`. Between jumps `Λ̂` is flat, so the supremum is attained
    /// at a jump (either side) or at `τ`.
    pub fn sup_error<F: Fn(f64) -> f64>(&self, lambda: F) -> f64 {
        let mut cum = 0.0;
        let mut sup: f64 = 0.0;
        let len = self.early.len();
        let mut i = 0;
        while i < len {
            let t = self.early[i].0;
            let mut j = i;
            let mut d = 0usize;
            while j < len && self.early[j].0 == t {
                d += self.early[j].1 as usize;
                j += 1;
            }
            if d > 0 {
                let l = lambda(t);
                sup = sup.max((cum - l).abs());
                cum += d as f64 / (self.n - i) as f64;
                sup = sup.max((cum - l).abs());
            }
            i = j;
        }
        sup.max((cum - lambda(self.tau)).abs())
    }
}

/// Monte Carlo estimate of sequential band coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEstimate {
    pub coverage: f64,
    pub mc_se: f64,
    pub reps: usize,
    pub start: u64,
    pub horizon: u64,
    /// Coverage is only checked up to `horizon`, so it overstates the
    /// coverage of the unbounded event `n ≥ start`.
    pub caveat: String,
}

fn finite_horizon_caveat(horizon: u64) -> String {
    format!("simultaneity checked only for n <= {horizon}; the unbounded event has coverage at most this estimate")
}

/// Coverage of `sup_{t ≤ τ}|Λ̂_n − Λ| ≤ ε₀` for all `n ∈ [m, horizon]`, at
/// every start `m` in `starts`, from the same replicates.
pub fn simulate_coverage_at(
    model: &SurvivalModel,
    tau: f64,
    eps0: f64,
    starts: &[u64],
    horizon: u64,
    reps: usize,
    seed: &SeedSpec,
) -> Result<Vec<CoverageEstimate>, SurvivalError> {
    if reps < MIN_COVERAGE_REPLICATIONS {
        return Err(SurvivalError::TooFewReplications {
            got: reps,
            min: MIN_COVERAGE_REPLICATIONS,
        });
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SurvivalError::InvalidTau(tau));
    }
    for &start in starts {
        if start == 0 || start > horizon {
            return Err(SurvivalError::InvalidStart {
                start: start as usize,
                horizon: horizon as usize,
            });
        }
    }
    let first = starts.iter().copied().min().unwrap_or(horizon);
    let last_bad = replicate(seed, reps, |_, rng| {
        let mut na = SequentialNelsonAalen::new(tau);
        let mut last = 0u64;
        for n in 1..=horizon {
            let (z, d) = model.sample(rng);
            na.push(z, d);
            if n >= first && na.sup_error(|t| model.cumulative_hazard(t)) > eps0 {
                last = n;
            }
        }
        last
    });
    Ok(starts
        .iter()
        .map(|&start| {
            let covered = last_bad.iter().filter(|l| **l < start).count();
            let p = covered as f64 / reps as f64;
            CoverageEstimate {
                coverage: p,
                mc_se: (p * (1.0 - p) / reps as f64).sqrt(),
                reps,
                start,
                horizon,
                caveat: finite_horizon_caveat(horizon),
            }
        })
        .collect())
}

/// Coverage at the band's recommended `m` with horizon
/// `⌈horizon_multiple · m_high⌉`.
pub fn simulate_band_coverage(
    model: &SurvivalModel,
    tau: f64,
    band: &BandSpec,
    horizon_multiple: f64,
    reps: usize,
    seed: &SeedSpec,
) -> Result<CoverageEstimate, SurvivalError> {
    let horizon = (horizon_multiple * band.m_high as f64).ceil() as u64;
    let mut out = simulate_coverage_at(
        model,
        tau,
        band.eps0,
        &[band.recommended_m()],
        horizon,
        reps,
        seed,
    )?;
    Ok(out.remove(0))
}
