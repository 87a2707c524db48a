//! Risk-averse sample average approximation with the absolute semideviation
//! `ρ_λ(Z) = EZ + λE[Z − EZ]_+`, and sequential sample-size rules.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::limit_laws::{scaled_size, LawError, SizingConvention};
use crate::mc::replicate;
use crate::rng::{SeedSpec, StreamRng};

/// Minimum replications for coverage studies.
pub const MIN_COVERAGE_REPLICATIONS: usize = 500;
/// Recommended pilot size for `σ²`.
pub const RECOMMENDED_PILOT: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SaaError {
    #[error("no samples")]
    EmptySamples,
    #[error("lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("decision grid is empty")]
    EmptyGrid,
    #[error("loss is not finite at x = {x} for scenario {replicate}")]
    NonFiniteLoss { x: f64, replicate: usize },
    #[error("sample size {got} is below the minimum {min}")]
    SampleTooSmall { got: usize, min: usize },
    #[error("{got} replications requested, at least {min} required")]
    TooFewReplications { got: usize, min: usize },
    #[error("log argument c2/eps = {0} must exceed 1")]
    InvalidLogArgument(f64),
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("scenario law is invalid: {0}")]
    InvalidLaw(String),
    #[error("exact evaluation needs a finite scenario law")]
    NotFinite,
    #[error("coverage start {start} must lie in 1..=horizon ({horizon})")]
    InvalidStart { start: u64, horizon: u64 },
    #[error(transparent)]
    Law(#[from] LawError),
}

fn check_lambda(lambda: f64) -> Result<(), SaaError> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(SaaError::InvalidLambda(lambda))
    }
}

/// `mean + λ · mean((z − mean)_+)`.
pub fn semideviation_risk(samples: &[f64], lambda: f64) -> Result<f64, SaaError> {
    if samples.is_empty() {
        return Err(SaaError::EmptySamples);
    }
    check_lambda(lambda)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let upper = samples.iter().map(|z| (z - mean).max(0.0)).sum::<f64>() / n;
    Ok(mean + lambda * upper)
}

/// `ρ_λ` of a discrete law with atoms `values` and probabilities `weights`.
pub fn weighted_semideviation(values: &[f64], weights: &[f64], lambda: f64) -> f64 {
    let mean: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    let upper: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - mean).max(0.0))
        .sum();
    mean + lambda * upper
}

/// Scenario distribution of `ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioLaw {
    Discrete { atoms: Vec<f64>, probs: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

impl ScenarioLaw {
    pub fn discrete(atoms: Vec<f64>, probs: Vec<f64>) -> Result<Self, SaaError> {
        if atoms.is_empty() || atoms.len() != probs.len() {
            return Err(SaaError::InvalidLaw("need one probability per atom".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(SaaError::InvalidLaw("probabilities must be >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SaaError::InvalidLaw(format!("probabilities sum to {total}")));
        }
        Ok(Self::Discrete { atoms, probs })
    }

    /// Index of the sampled atom (discrete laws only).
    fn sample_atom(probs: &[f64], rng: &mut StreamRng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        probs.len() - 1
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match self {
            Self::Discrete { atoms, probs } => atoms[Self::sample_atom(probs, rng)],
            Self::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Self::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
        }
    }
}

pub type LossFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// `min_{x ∈ grid} ρ_λ[G(x, ξ)]`.
#[derive(Clone)]
pub struct RiskProblem {
    pub decision_grid: Vec<f64>,
    pub loss: LossFn,
    pub scenarios: ScenarioLaw,
    pub lambda: f64,
    pub name: String,
}

impl fmt::Debug for RiskProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RiskProblem")
            .field("name", &self.name)
            .field("decision_grid", &self.decision_grid)
            .field("scenarios", &self.scenarios)
            .field("lambda", &self.lambda)
            .finish_non_exhaustive()
    }
}

impl RiskProblem {
    pub fn new(
        name: impl Into<String>,
        decision_grid: Vec<f64>,
        loss: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        scenarios: ScenarioLaw,
        lambda: f64,
    ) -> Result<Self, SaaError> {
        if decision_grid.is_empty() {
            return Err(SaaError::EmptyGrid);
        }
        check_lambda(lambda)?;
        Ok(Self {
            decision_grid,
            loss: Arc::new(loss),
            scenarios,
            lambda,
            name: name.into(),
        })
    }

    /// Same problem with loss `factor · G`.
    pub fn scaled(&self, factor: f64) -> Self {
        let inner = Arc::clone(&self.loss);
        Self {
            loss: Arc::new(move |x, xi| factor * inner(x, xi)),
            ..self.clone()
        }
    }

    fn draw(&self, n: usize, seed: &SeedSpec) -> Vec<f64> {
        let mut rng = seed.rng();
        (0..n).map(|_| self.scenarios.sample(&mut rng)).collect()
    }

    fn losses(&self, x: f64, scenarios: &[f64]) -> Result<Vec<f64>, SaaError> {
        scenarios
            .iter()
            .enumerate()
            .map(|(replicate, xi)| {
                let g = (self.loss)(x, *xi);
                if g.is_finite() {
                    Ok(g)
                } else {
                    Err(SaaError::NonFiniteLoss { x, replicate })
                }
            })
            .collect()
    }

    /// Exact `(x*, index, v)` by enumeration over a discrete law, ties to the
    /// smallest index.
    pub fn exact_optimum(&self) -> Result<(f64, usize, f64), SaaError> {
        let ScenarioLaw::Discrete { atoms, probs } = &self.scenarios else {
            return Err(SaaError::NotFinite);
        };
        let mut best = (self.decision_grid[0], 0, f64::INFINITY);
        for (i, &x) in self.decision_grid.iter().enumerate() {
            let g: Vec<f64> = atoms.iter().map(|xi| (self.loss)(x, *xi)).collect();
            let r = weighted_semideviation(&g, probs, self.lambda);
            if r < best.2 {
                best = (x, i, r);
            }
        }
        Ok(best)
    }

    /// Exact `σ²` of the transform at `x` (discrete laws only).
    pub fn exact_sigma2(&self, x: f64, variant: Sigma2Variant) -> Result<f64, SaaError> {
        let ScenarioLaw::Discrete { atoms, probs } = &self.scenarios else {
            return Err(SaaError::NotFinite);
        };
        let g: Vec<f64> = atoms.iter().map(|xi| (self.loss)(x, *xi)).collect();
        let mean: f64 = g.iter().zip(probs).map(|(v, p)| v * p).sum();
        let alpha_star: f64 = g
            .iter()
            .zip(probs)
            .filter(|(v, _)| **v <= mean)
            .map(|(_, p)| p)
            .sum();
        let h: Vec<f64> = g
            .iter()
            .map(|v| variant.transform(*v, mean, alpha_star, self.lambda))
            .collect();
        let hm: f64 = h.iter().zip(probs).map(|(v, p)| v * p).sum();
        Ok(h.iter().zip(probs).map(|(v, p)| p * (v - hm).powi(2)).sum())
    }
}

/// SAA solution on one scenario set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaaResult {
    pub n: usize,
    pub x_hat: f64,
    pub x_index: usize,
    pub v_hat: f64,
    pub seed: SeedSpec,
}

/// Minimise the empirical risk over the grid using one scenario set of size
/// `n` shared by all decisions.
pub fn saa_solve(problem: &RiskProblem, n: usize, seed: &SeedSpec) -> Result<SaaResult, SaaError> {
    if n < 2 {
        return Err(SaaError::SampleTooSmall { got: n, min: 2 });
    }
    let scenarios = problem.draw(n, seed);
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in problem.decision_grid.iter().enumerate() {
        let r = semideviation_risk(&problem.losses(x, &scenarios)?, problem.lambda)?;
        if best.map_or(true, |(_, v)| r < v) {
            best = Some((i, r));
        }
    }
    let (x_index, v_hat) = best.expect("grid is non-empty");
    Ok(SaaResult {
        n,
        x_hat: problem.decision_grid[x_index],
        x_index,
        v_hat,
        seed: *seed,
    })
}

/// Reading of the third term of the `σ²` transform.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sigma2Variant {
    /// `G + λα*(G − EG)_+ + λ(1 − α*)(EG − G)_+`.
    #[default]
    Symmetric,
    /// `G + λα*(G − EG)_+ + λ(1 − α*)(−G − EG)_+`, as printed.
    Literal,
}

impl Sigma2Variant {
    fn transform(self, g: f64, mean: f64, alpha_star: f64, lambda: f64) -> f64 {
        let lower = match self {
            Self::Symmetric => (mean - g).max(0.0),
            Self::Literal => (-g - mean).max(0.0),
        };
        g + lambda * alpha_star * (g - mean).max(0.0) + lambda * (1.0 - alpha_star) * lower
    }
}

/// Pilot estimate of `σ²` at `x_star`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Estimate {
    pub sigma2: f64,
    pub mean: f64,
    pub alpha_star: f64,
    pub n_pilot: usize,
    /// The pilot losses were all equal.
    pub degenerate: bool,
}

/// Estimate `EG` and `α* = P(G ≤ EG)` from a pilot of size `n_pilot`, then
/// return the sample variance of the transform over the same pilot.
pub fn sigma2_saa(
    problem: &RiskProblem,
    x_star: f64,
    n_pilot: usize,
    seed: &SeedSpec,
    variant: Sigma2Variant,
) -> Result<Sigma2Estimate, SaaError> {
    if n_pilot < 2 {
        return Err(SaaError::SampleTooSmall { got: n_pilot, min: 2 });
    }
    let g = problem.losses(x_star, &problem.draw(n_pilot, seed))?;
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let alpha_star = g.iter().filter(|v| **v <= mean).count() as f64 / n;
    let h: Vec<f64> = g
        .iter()
        .map(|v| variant.transform(*v, mean, alpha_star, problem.lambda))
        .collect();
    let hm = h.iter().sum::<f64>() / n;
    let sigma2 = h.iter().map(|v| (v - hm).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Sigma2Estimate {
        sigma2,
        mean,
        alpha_star,
        n_pilot,
        degenerate: g.iter().all(|v| *v == g[0]),
    })
}

/// `N(α, ε) = ⌈σ² S⁻¹(p_high)² / ε²⌉`, with `p_high = α/2` by default.
pub fn sample_size_n(
    alpha: f64,
    eps: f64,
    sigma2: f64,
    convention: SizingConvention,
) -> Result<u64, SaaError> {
    let (_, p_high) = convention.survival_levels(alpha);
    Ok(scaled_size(sigma2, eps, p_high)?.ceil() as u64)
}

/// `n(α, ε) = ⌈(C₁/ε²)(ln(C₂/ε) + ln(1/α))⌉`.
pub fn shapiro_size(c1: f64, c2: f64, alpha: f64, eps: f64) -> Result<u64, SaaError> {
    for (name, value) in [("c1", c1), ("c2", c2), ("eps", eps)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(SaaError::NonPositive { name, value });
        }
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LawError::InvalidProbability(alpha).into());
    }
    let arg = c2 / eps;
    if arg <= 1.0 {
        return Err(SaaError::InvalidLogArgument(arg));
    }
    Ok((c1 / (eps * eps) * (arg.ln() + (1.0 / alpha).ln())).ceil() as u64)
}

/// Sequential coverage estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaaCoverage {
    pub coverage: f64,
    pub mc_se: f64,
    pub reps: usize,
    pub start: u64,
    pub horizon: u64,
}

/// Coverage of `|v̂_m − v| < ε` for all `m ∈ [start, horizon]` at each
/// start, with `v̂_m` computed on nested prefixes of one scenario stream.
pub fn coverage_at(
    problem: &RiskProblem,
    eps: f64,
    starts: &[u64],
    horizon: u64,
    reps: usize,
    seed: &SeedSpec,
) -> Result<Vec<SaaCoverage>, SaaError> {
    let ScenarioLaw::Discrete { atoms, probs } = &problem.scenarios else {
        return Err(SaaError::NotFinite);
    };
    if reps < MIN_COVERAGE_REPLICATIONS {
        return Err(SaaError::TooFewReplications {
            got: reps,
            min: MIN_COVERAGE_REPLICATIONS,
        });
    }
    for &start in starts {
        if start == 0 || start > horizon {
            return Err(SaaError::InvalidStart { start, horizon });
        }
    }
    let (_, _, v) = problem.exact_optimum()?;
    // losses[i][k] = G(x_i, atom k)
    let losses: Vec<Vec<f64>> = problem
        .decision_grid
        .iter()
        .map(|x| atoms.iter().map(|xi| (problem.loss)(*x, *xi)).collect())
        .collect();
    let first = starts.iter().copied().min().unwrap_or(horizon);
    let lambda = problem.lambda;
    let last_bad = replicate(seed, reps, |_, rng| {
        let mut counts = vec![0u64; atoms.len()];
        let mut weights = vec![0.0; atoms.len()];
        let mut last = 0u64;
        for m in 1..=horizon {
            counts[ScenarioLaw::sample_atom(probs, rng)] += 1;
            if m < first {
                continue;
            }
            for (w, c) in weights.iter_mut().zip(&counts) {
                *w = *c as f64 / m as f64;
            }
            let v_hat = losses
                .iter()
                .map(|g| weighted_semideviation(g, &weights, lambda))
                .fold(f64::INFINITY, f64::min);
            if (v_hat - v).abs() >= eps {
                last = m;
            }
        }
        last
    });
    Ok(starts
        .iter()
        .map(|&start| {
            let p = last_bad.iter().filter(|l| **l < start).count() as f64 / reps as f64;
            SaaCoverage {
                coverage: p,
                mc_se: (p * (1.0 - p) / reps as f64).sqrt(),
                reps,
                start,
                horizon,
            }
        })
        .collect())
}

/// Sizing and coverage summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialCoverage {
    pub sigma2: f64,
    #[serde(rename = "N")]
    pub n: u64,
    pub v: f64,
    pub x_star: f64,
    pub coverage: f64,
    pub mc_se: f64,
    pub reps: usize,
    pub horizon: u64,
}

/// Size with `N(α, ε)` from the exact `σ²` at the exact minimiser, then
/// estimate coverage over `[N, ⌈horizon_multiple · N⌉]`.
pub fn verify_sequential_coverage(
    problem: &RiskProblem,
    alpha: f64,
    eps: f64,
    horizon_multiple: f64,
    reps: usize,
    seed: &SeedSpec,
    convention: SizingConvention,
) -> Result<SequentialCoverage, SaaError> {
    let (x_star, _, v) = problem.exact_optimum()?;
    let sigma2 = problem.exact_sigma2(x_star, Sigma2Variant::Symmetric)?;
    let n = sample_size_n(alpha, eps, sigma2, convention)?.max(1);
    let horizon = ((horizon_multiple * n as f64).ceil() as u64).max(n);
    let c = coverage_at(problem, eps, &[n], horizon, reps, seed)?.remove(0);
    Ok(SequentialCoverage {
        sigma2,
        n,
        v,
        x_star,
        coverage: c.coverage,
        mc_se: c.mc_se,
        reps,
        horizon,
    })
}

/// Names accepted by [`toy_problem`].
pub const TOY_NAMES: [&str; 3] = ["newsvendor", "two-point", "uniform-absolute"];

/// Built-in problems. `lambda` overrides the default risk weight.
///
/// * `newsvendor`: order `x ∈ {0..5}` at unit cost 1, sell at 2.5, demand on
///   `{1,2,3,4}` with probabilities `(0.1, 0.3, 0.4, 0.2)`;
///   `G = x − 2.5 min(x, ξ)`. Default `λ = 0.5`.
/// * `two-point`: `G = |x − ξ|`, `ξ` uniform on `{0, 1}`, `x ∈ {0, 0.5, 1}`.
///   Default `λ = 0`.
/// * `uniform-absolute`: `G = |x − ξ|`, `ξ ~ U(0, 1)`, `x ∈ {0, 0.1, …, 1}`.
///   Default `λ = 0.5`.
pub fn toy_problem(name: &str, lambda: Option<f64>) -> Result<RiskProblem, SaaError> {
    match name {
        "newsvendor" => RiskProblem::new(
            name,
            (0..=5).map(f64::from).collect(),
            |x, xi| x - 2.5 * x.min(xi),
            ScenarioLaw::discrete(vec![1.0, 2.0, 3.0, 4.0], vec![0.1, 0.3, 0.4, 0.2])?,
            lambda.unwrap_or(0.5),
        ),
        "two-point" => RiskProblem::new(
            name,
            vec![0.0, 0.5, 1.0],
            |x, xi| (x - xi).abs(),
            ScenarioLaw::discrete(vec![0.0, 1.0], vec![0.5, 0.5])?,
            lambda.unwrap_or(0.0),
        ),
        "uniform-absolute" => RiskProblem::new(
            name,
            (0..=10).map(|i| i as f64 / 10.0).collect(),
            |x, xi| (x - xi).abs(),
            ScenarioLaw::Uniform { lo: 0.0, hi: 1.0 },
            lambda.unwrap_or(0.5),
        ),
        other => Err(SaaError::InvalidLaw(format!(
            "unknown toy problem `{other}` (known: {})",
            TOY_NAMES.join(", ")
        ))),
    }
}
