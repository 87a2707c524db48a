use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use lastexit::gp_sim::BrownianSheetSup;
use lastexit::last_time::{
    self, figure_r_curve, simulate_trajectory_draws, LimitGrid, ScalarLaw, ScalarMeanLimit,
    TrajectoryModel,
};
use lastexit::limit_laws::{
    self, adler_2d_bound, ks_abs_sup_cdf, ks_abs_sup_survival, ks_abs_sup_survival_inverse,
    QuantileRow, SizingConvention, SupDistribution, TailBound,
};
use lastexit::saa::{self, Sigma2Variant};
use lastexit::survival::{self, CensoredSample, SurvivalModel};
use lastexit::verify::{self, VerifyConfig};
use lastexit::SeedSpec;

/// Exit codes.
const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_INPUT: u8 = 3;
const EXIT_BUDGET: u8 = 4;
const EXIT_COMPUTE: u8 = 5;
const EXIT_OUTPUT: u8 = 6;

/// Largest replication count accepted by any subcommand.
const MAX_REPS: usize = 1_000_000;
/// Largest dyadic level for path grids.
const MAX_PATH_LEVEL: u32 = 16;
/// Largest dyadic level for sheet grids (per axis).
const MAX_SHEET_LEVEL: u32 = 12;

#[derive(Debug, Error)]
enum CliError {
    #[error("cannot read input: {0}")]
    Input(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("{0}")]
    Compute(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Input(_) => EXIT_INPUT,
            Self::Budget(_) => EXIT_BUDGET,
            Self::Compute(_) => EXIT_COMPUTE,
            Self::Output(_) => EXIT_OUTPUT,
        }
    }
}

fn compute<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Compute(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "lastexit", version, about = "Last-exit times and sequential confidence sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Common {
    /// Master seed; every random stream of the run derives from it.
    #[arg(long, default_value_t = verify::DEFAULT_VERIFY_SEED)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use the √α sizing arguments and the literal third term of the SAA
    /// variance transform.
    #[arg(long)]
    paper_literal: bool,
}

impl Common {
    fn convention(&self) -> SizingConvention {
        if self.paper_literal {
            SizingConvention::PaperLiteral
        } else {
            SizingConvention::Derived
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tables of the sup|B| series, tail bounds and sheet quantile sandwich.
    Limits {
        #[command(flatten)]
        common: Common,
        /// Replications for the Monte Carlo sheet quantiles (0 to skip).
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        /// Dyadic level of the sheet grid (points per axis = 2^grid).
        #[arg(long, default_value_t = 7)]
        grid: u32,
        /// Upper-tail level of the sandwich.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Simulate ε²N_ε, ε²Q_ε, R_ε and ε⁻¹M_ε for an estimator.
    LasttimeSim {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = EstimatorArg::Mean)]
        estimator: EstimatorArg,
        #[arg(long, value_enum, default_value_t = LawArg::CenteredUniform)]
        law: LawArg,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        /// Horizon is ceil(c / ε²).
        #[arg(long, default_value_t = last_time::DEFAULT_HORIZON_MULTIPLE)]
        horizon_multiple: f64,
        /// Evaluation points for ecdf-sup.
        #[arg(long, default_value_t = 32)]
        ecdf_points: usize,
        /// Analysis horizon for nelson-aalen.
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        /// Also simulate the limit variables on a 2^grid point s-grid.
        #[arg(long)]
        grid: Option<u32>,
    },
    /// Quantile curve of the limit of R_ε(1, b) over b.
    FigureR {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        /// Points on the s-grid = 2^grid.
        #[arg(long, default_value_t = 12)]
        grid: u32,
    },
    /// Size a sequential Nelson–Aalen band from a `time,event` CSV.
    Confset {
        #[command(flatten)]
        common: Common,
        /// Input CSV with header `time,event`.
        #[arg(long)]
        input: PathBuf,
        /// Analysis horizon (default: largest observed time).
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.15)]
        eps0: f64,
    },
    /// Risk-averse SAA sizing and sequential coverage on a toy problem.
    Saa {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "newsvendor")]
        problem: String,
        /// Risk weight λ (problem default when omitted).
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = verify::SAA_EPS)]
        eps: f64,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long, default_value_t = saa::RECOMMENDED_PILOT)]
        pilot: usize,
        #[arg(long, default_value_t = 1.0)]
        c1: f64,
        #[arg(long, default_value_t = 1.0)]
        c2: f64,
        #[arg(long, default_value_t = 5.0)]
        horizon_multiple: f64,
    },
    /// Run the acceptance criteria and print a pass/fail table.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Reduced Monte Carlo budgets.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Mean,
    Median,
    EcdfSup,
    NelsonAalen,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LawArg {
    CenteredUniform,
    StandardNormal,
    Exponential,
}

impl From<LawArg> for ScalarLaw {
    fn from(l: LawArg) -> Self {
        match l {
            LawArg::CenteredUniform => ScalarLaw::CenteredUniform,
            LawArg::StandardNormal => ScalarLaw::StandardNormal,
            LawArg::Exponential => ScalarLaw::Exponential,
        }
    }
}

/// Replay information written next to every artifact.
#[derive(Debug, Serialize)]
struct Meta<'a> {
    command: &'a str,
    seed: u64,
    grid_resolution: Option<usize>,
    replications: Option<usize>,
    paper_literal: bool,
    versions: serde_json::Value,
    parameters: serde_json::Value,
}

fn versions() -> serde_json::Value {
    json!({
        "lastexit": env!("CARGO_PKG_VERSION"),
        "gp_sim": env!("CARGO_PKG_VERSION"),
        "limit_laws": env!("CARGO_PKG_VERSION"),
        "last_time": env!("CARGO_PKG_VERSION"),
        "survival": env!("CARGO_PKG_VERSION"),
        "saa": env!("CARGO_PKG_VERSION"),
    })
}

struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        println!("wrote {}", path.display());
        Ok(path)
    }

    fn csv<F>(&self, name: &str, meta: &Meta, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> csv::Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf).map_err(|e| CliError::Output(e.to_string()))?;
        self.write(name, &buf)?;
        self.json(&format!("{name}.meta.json"), meta)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes()).map(|_| ())
    }
}

fn check_reps(reps: usize) -> Result<(), CliError> {
    if reps > MAX_REPS {
        Err(CliError::Budget(format!("{reps} replications exceed the limit of {MAX_REPS}")))
    } else {
        Ok(())
    }
}

fn check_level(level: u32, max: u32, what: &str) -> Result<(), CliError> {
    if level > max {
        Err(CliError::Budget(format!("{what} level {level} exceeds the limit of {max}")))
    } else {
        Ok(())
    }
}

fn run_limits(common: &Common, reps: usize, grid: u32, alpha: f64) -> Result<(), CliError> {
    check_reps(reps)?;
    check_level(grid, MAX_SHEET_LEVEL, "sheet grid")?;
    let out = Artifacts::new(&common.out)?;
    let convention = common.convention();

    let mut rows = Vec::new();
    for p in [0.001, 0.01, 0.025, 0.05, 0.1, 0.2, 0.25, 0.5, 0.75, 0.9] {
        rows.push(QuantileRow {
            level: p,
            point: ks_abs_sup_survival_inverse(p).map_err(compute)?,
            mc_se: 0.0,
            method: "series_inverse".into(),
        });
    }
    let (p_low, p_high) = convention.survival_levels(alpha);
    rows.push(QuantileRow {
        level: alpha,
        point: ks_abs_sup_survival_inverse(p_low).map_err(compute)?,
        mc_se: 0.0,
        method: "sandwich_lower".into(),
    });
    rows.push(QuantileRow {
        level: alpha,
        point: ks_abs_sup_survival_inverse(p_high).map_err(compute)?,
        mc_se: 0.0,
        method: "sandwich_upper".into(),
    });
    let mut resolution = None;
    if reps > 0 {
        let sampler = BrownianSheetSup::dyadic(grid);
        let dist = SupDistribution::simulate(&sampler, reps, &SeedSpec::new(common.seed, 1));
        resolution = Some(1usize << grid);
        for level in [0.01, 0.05, 0.1, 0.2, 0.5] {
            let q = dist.upper_quantile(level);
            rows.push(QuantileRow {
                level,
                point: q.point,
                mc_se: q.mc_se,
                method: "sheet_mc".into(),
            });
        }
    }
    let meta = Meta {
        command: "limits",
        seed: common.seed,
        grid_resolution: resolution,
        replications: Some(reps),
        paper_literal: common.paper_literal,
        versions: versions(),
        parameters: json!({ "alpha": alpha, "convention": convention }),
    };
    out.csv("limits_quantiles.csv", &meta, |buf| limit_laws::write_quantile_csv(&rows, buf))?;

    out.csv("limits_series.csv", &meta, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["lambda", "cdf", "survival", "sheet_lower", "sheet_upper", "adler2d"])?;
        for i in 1..=60 {
            let lambda = i as f64 * 0.05;
            let sandwich = TailBound::reflection_sandwich(lambda);
            let adler = adler_2d_bound(lambda).unwrap_or(1.0);
            w.write_record([
                format!("{lambda:.2}"),
                ks_abs_sup_cdf(lambda).to_string(),
                ks_abs_sup_survival(lambda).to_string(),
                sandwich.lower.to_string(),
                sandwich.upper.to_string(),
                adler.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
}

#[allow(clippy::too_many_arguments)]
fn run_lasttime(
    common: &Common,
    estimator: EstimatorArg,
    law: LawArg,
    eps: f64,
    reps: usize,
    horizon_multiple: f64,
    ecdf_points: usize,
    tau: f64,
    grid: Option<u32>,
) -> Result<(), CliError> {
    check_reps(reps)?;
    let horizon = last_time::horizon_for(eps, horizon_multiple).map_err(compute)?;
    if (horizon as f64) * (reps as f64) > 2e10 {
        return Err(CliError::Budget(format!(
            "{reps} trajectories of length {horizon} exceed the budget of 2e10 steps"
        )));
    }
    let model = match estimator {
        EstimatorArg::Mean => TrajectoryModel::Mean(law.into()),
        EstimatorArg::Median => TrajectoryModel::Median(law.into()),
        EstimatorArg::EcdfSup => TrajectoryModel::EcdfSup { points: ecdf_points },
        EstimatorArg::NelsonAalen => TrajectoryModel::NelsonAalen {
            model: SurvivalModel::default(),
            tau,
        },
    };
    let bands = [(1.0, 1.53), (1.0, 2.0), (1.0, 3.0)];
    let out = Artifacts::new(&common.out)?;
    let seed = SeedSpec::new(common.seed, 2);
    let draws = simulate_trajectory_draws(&model, eps, horizon_multiple, reps, &seed, &bands)
        .map_err(compute)?;
    let label = model.label();
    let meta = Meta {
        command: "lasttime-sim",
        seed: common.seed,
        grid_resolution: Some(horizon),
        replications: Some(reps),
        paper_literal: common.paper_literal,
        versions: versions(),
        parameters: json!({
            "estimator": label,
            "law": format!("{law:?}"),
            "eps": eps,
            "horizon_multiple": horizon_multiple,
            "ecdf_points": ecdf_points,
            "tau": tau,
        }),
    };
    let table = draws.table();
    out.csv(&format!("lasttime_{label}.csv"), &meta, |buf| table.write_csv(buf))?;

    if let Some(level) = grid {
        check_level(level, MAX_PATH_LEVEL, "s-grid")?;
        let reps = reps.max(last_time::MIN_REPLICATIONS);
        let sampler = model
            .limit_sampler()
            .ok_or_else(|| CliError::Compute(format!("no limit sampler for {label}")))?;
        let lgrid = LimitGrid::new(last_time::DEFAULT_LIMIT_LOWER, last_time::DEFAULT_LIMIT_UPPER, 1 << level)
            .map_err(compute)?;
        let limit = last_time::simulate_limit_stats(
            sampler.as_ref(),
            &lgrid,
            reps,
            &SeedSpec::new(common.seed, 3),
            &bands,
        )
        .map_err(compute)?;
        let meta = Meta {
            grid_resolution: Some(lgrid.len()),
            replications: Some(reps),
            ..meta
        };
        out.csv(&format!("lasttime_{label}_limit.csv"), &meta, |buf| limit.write_csv(buf))?;
    }
    Ok(())
}

fn run_figure_r(common: &Common, reps: usize, grid: u32) -> Result<(), CliError> {
    check_reps(reps)?;
    check_level(grid, MAX_PATH_LEVEL, "s-grid")?;
    let out = Artifacts::new(&common.out)?;
    let lgrid = LimitGrid::new(last_time::DEFAULT_LIMIT_LOWER, last_time::DEFAULT_LIMIT_UPPER, 1 << grid)
        .map_err(compute)?;
    let b_grid = last_time::default_b_grid();
    let table = figure_r_curve(
        &ScalarMeanLimit { sigma: 1.0 },
        &lgrid,
        reps,
        &SeedSpec::new(common.seed, 4),
        &b_grid,
    )
    .map_err(compute)?;
    let meta = Meta {
        command: "figure-r",
        seed: common.seed,
        grid_resolution: Some(lgrid.len()),
        replications: Some(reps),
        paper_literal: common.paper_literal,
        versions: versions(),
        parameters: json!({
            "lower": lgrid.lower(),
            "s_max": lgrid.s_max(),
            "b_min": b_grid[0],
            "b_max": b_grid[b_grid.len() - 1],
        }),
    };
    out.csv("figure_r.csv", &meta, |buf| table.write_csv(buf))
}

fn run_confset(
    common: &Common,
    input: &Path,
    tau: Option<f64>,
    alpha: f64,
    eps0: f64,
) -> Result<(), CliError> {
    let file = fs::File::open(input).map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?;
    let sample = CensoredSample::from_csv(file, tau).map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?;
    let report = survival::band_report(&sample, eps0, alpha, common.convention()).map_err(compute)?;
    let curve = survival::nelson_aalen(&sample).map_err(compute)?;
    let out = Artifacts::new(&common.out)?;
    let meta = Meta {
        command: "confset",
        seed: common.seed,
        grid_resolution: None,
        replications: None,
        paper_literal: common.paper_literal,
        versions: versions(),
        parameters: json!({ "input": input.display().to_string(), "tau": sample.tau(), "alpha": alpha, "eps0": eps0 }),
    };
    out.json("band.json", &json!({
        "sigma2": report.sigma2,
        "m_low": report.m_low,
        "m_high": report.m_high,
        "recommended_m": report.recommended_m,
        "meta": meta,
    }))?;
    out.csv("hazard.csv", &meta, |buf| curve.write_csv(buf))
}

#[allow(clippy::too_many_arguments)]
fn run_saa(
    common: &Common,
    problem: &str,
    lambda: Option<f64>,
    alpha: f64,
    eps: f64,
    reps: usize,
    pilot: usize,
    c1: f64,
    c2: f64,
    horizon_multiple: f64,
) -> Result<(), CliError> {
    check_reps(reps)?;
    check_reps(pilot)?;
    let p = saa::toy_problem(problem, lambda).map_err(|e| CliError::Input(e.to_string()))?;
    let variant = if common.paper_literal {
        Sigma2Variant::Literal
    } else {
        Sigma2Variant::Symmetric
    };
    let convention = common.convention();
    let x_star = match p.exact_optimum() {
        Ok((x, _, _)) => x,
        Err(_) => saa::saa_solve(&p, pilot, &SeedSpec::new(common.seed, 5)).map_err(compute)?.x_hat,
    };
    let s2 = saa::sigma2_saa(&p, x_star, pilot, &SeedSpec::new(common.seed, 6), variant).map_err(compute)?;
    let n = saa::sample_size_n(alpha, eps, s2.sigma2, convention).map_err(compute)?;
    let shapiro_n = saa::shapiro_size(c1, c2, alpha, eps).map_err(compute)?;
    let coverage = if p.exact_optimum().is_ok() && reps > 0 {
        let horizon = ((horizon_multiple * n as f64).ceil() as u64).max(n.max(1));
        if (horizon as f64) * (reps as f64) > 2e10 {
            return Err(CliError::Budget(format!("{reps} runs of length {horizon} exceed 2e10 steps")));
        }
        let c = saa::coverage_at(&p, eps, &[n.max(1)], horizon, reps, &SeedSpec::new(common.seed, 7))
            .map_err(compute)?;
        Some(c[0].coverage)
    } else {
        None
    };
    let out = Artifacts::new(&common.out)?;
    let meta = Meta {
        command: "saa",
        seed: common.seed,
        grid_resolution: Some(p.decision_grid.len()),
        replications: Some(reps),
        paper_literal: common.paper_literal,
        versions: versions(),
        parameters: json!({
            "problem": problem,
            "lambda": p.lambda,
            "alpha": alpha,
            "eps": eps,
            "pilot": pilot,
            "c1": c1,
            "c2": c2,
            "horizon_multiple": horizon_multiple,
            "x_star": x_star,
        }),
    };
    out.json("saa.json", &json!({
        "sigma2": s2.sigma2,
        "N": n,
        "shapiro_n": shapiro_n,
        "coverage": coverage,
        "reps": reps,
        "degenerate_loss": s2.degenerate,
        "meta": meta,
    }))
}

fn run_verify(common: &Common, quick: bool) -> Result<bool, CliError> {
    let cfg = VerifyConfig {
        seed: common.seed,
        quick,
    };
    let outcomes = verify::run_all(&cfg);
    for o in &outcomes {
        println!("{}", o.line());
        for c in &o.checks {
            println!("    {c}");
        }
    }
    let passed = outcomes.iter().all(|o| o.passed);
    println!(
        "{} of {} criteria passed",
        outcomes.iter().filter(|o| o.passed).count(),
        outcomes.len()
    );
    let out = Artifacts::new(&common.out)?;
    // Elapsed times are dropped so reruns give identical files.
    let stable: Vec<_> = outcomes
        .iter()
        .map(|o| json!({ "id": o.id, "title": o.title, "passed": o.passed, "summary": o.summary, "checks": o.checks }))
        .collect();
    out.json("verify.json", &json!({
        "passed": passed,
        "criteria": stable,
        "meta": Meta {
            command: "verify",
            seed: common.seed,
            grid_resolution: None,
            replications: None,
            paper_literal: common.paper_literal,
            versions: versions(),
            parameters: json!({ "quick": quick }),
        },
    }))?;
    Ok(passed)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Limits { common, reps, grid, alpha } => run_limits(&common, reps, grid, alpha)?,
        Command::LasttimeSim {
            common,
            estimator,
            law,
            eps,
            reps,
            horizon_multiple,
            ecdf_points,
            tau,
            grid,
        } => run_lasttime(&common, estimator, law, eps, reps, horizon_multiple, ecdf_points, tau, grid)?,
        Command::FigureR { common, reps, grid } => run_figure_r(&common, reps, grid)?,
        Command::Confset {
            common,
            input,
            tau,
            alpha,
            eps0,
        } => run_confset(&common, &input, tau, alpha, eps0)?,
        Command::Saa {
            common,
            problem,
            lambda,
            alpha,
            eps,
            reps,
            pilot,
            c1,
            c2,
            horizon_multiple,
        } => run_saa(&common, &problem, lambda, alpha, eps, reps, pilot, c1, c2, horizon_multiple)?,
        Command::Verify { common, quick } => {
            if !run_verify(&common, quick)? {
                return Ok(EXIT_VERIFY_FAILED);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
