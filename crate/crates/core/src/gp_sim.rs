//! Grid simulation of the Gaussian limit processes: Brownian motion and
//! bridge on (0,1], the Brownian sheet on (0,1]², and the Kiefer–Müller
//! process over a finite function class.
//!
//! Every simulator is a pure function of its grid(s) and stream. Paths are
//! built from independent Gaussian increments, so the implicit value at 0 is
//! always 0 and refining a grid only adds points. Suprema over a grid are lower
//! bounds for the continuum supremum.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::{SeedSpec, StreamRng};

/// Largest sheet (in cells) that will be materialised.
pub const MAX_SHEET_CELLS: usize = 1 << 24;

/// Default points per axis for path suprema.
pub const DEFAULT_PATH_LEVEL: u32 = 12;
/// Default points per axis for sheet suprema.
pub const DEFAULT_SHEET_LEVEL: u32 = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("grid is empty")]
    EmptyGrid,
    #[error("grid point {index} = {value} lies outside (0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("grid point {index} = {value} does not exceed its predecessor")]
    NotIncreasing { index: usize, value: f64 },
    #[error("grid must end at 1, last point is {last}")]
    MissingEndpoint { last: f64 },
    #[error("sheet grids need at least two points per axis, got {s_len} x {t_len}")]
    DegenerateSheet { s_len: usize, t_len: usize },
    #[error("sheet of {cells} cells exceeds the memory budget of {budget} cells")]
    SheetTooLarge { cells: usize, budget: usize },
    #[error("covariance matrix must be square and non-empty")]
    NotSquare,
    #[error("covariance matrix has a non-finite entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("covariance matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("covariance matrix is not positive semidefinite: eigenvalue {eigenvalue:e}")]
    NotPositiveSemidefinite { eigenvalue: f64 },
    #[error("discrete law is invalid: {0}")]
    InvalidLaw(String),
}

/// Strictly increasing points in (0, 1] ending at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    points: Vec<f64>,
    sqrt_spacing: Vec<f64>,
}

impl Grid1D {
    pub fn new(points: Vec<f64>) -> Result<Self, SimError> {
        let last = *points.last().ok_or(SimError::EmptyGrid)?;
        let mut prev = 0.0;
        for (index, &value) in points.iter().enumerate() {
            if !(value > 0.0 && value <= 1.0) {
                return Err(SimError::OutOfRange { index, value });
            }
            if index > 0 && value <= prev {
                return Err(SimError::NotIncreasing { index, value });
            }
            prev = value;
        }
        if last != 1.0 {
            return Err(SimError::MissingEndpoint { last });
        }
        let mut sqrt_spacing = Vec::with_capacity(points.len());
        let mut prev = 0.0;
        for &p in &points {
            sqrt_spacing.push((p - prev).sqrt());
            prev = p;
        }
        Ok(Self {
            points,
            sqrt_spacing,
        })
    }

    /// `{1/n, 2/n, ..., 1}`.
    pub fn uniform(n: usize) -> Result<Self, SimError> {
        Self::new((1..=n).map(|i| i as f64 / n as f64).collect())
    }

    /// Uniform grid with `2^level` points.
    pub fn dyadic(level: u32) -> Self {
        Self::uniform(1usize << level).expect("dyadic grids are valid")
    }

    /// `n` log-spaced points from `lo` to 1.
    pub fn geometric(lo: f64, n: usize) -> Result<Self, SimError> {
        if n == 1 {
            return Self::new(vec![1.0]);
        }
        if !(lo > 0.0 && lo < 1.0) {
            return Err(SimError::OutOfRange { index: 0, value: lo });
        }
        let ln_lo = lo.ln();
        let pts = (0..n)
            .map(|i| {
                if i + 1 == n {
                    1.0
                } else {
                    (ln_lo * (1.0 - i as f64 / (n - 1) as f64)).exp()
                }
            })
            .collect();
        Self::new(pts)
    }

    /// The grid with every gap bisected (`2n` points, a superset of `self`).
    pub fn refine(&self) -> Self {
        let mut pts = Vec::with_capacity(2 * self.points.len());
        let mut prev = 0.0;
        for &p in &self.points {
            pts.push(0.5 * (prev + p));
            pts.push(p);
            prev = p;
        }
        Self::new(pts).expect("bisecting a valid grid keeps it valid")
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Gaps `p_i - p_{i-1}` with `p_0 = 0` implied.
    pub fn spacings(&self) -> impl Iterator<Item = f64> + '_ {
        self.sqrt_spacing.iter().map(|s| s * s)
    }

    pub(crate) fn sqrt_spacings(&self) -> &[f64] {
        &self.sqrt_spacing
    }
}

/// Values of a process on a [`Grid1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

/// Values of a two-parameter process, row-major with `s` as the row index.
#[derive(Debug, Clone, PartialEq)]
pub struct SheetGrid {
    pub s_grid: Grid1D,
    pub t_grid: Grid1D,
    pub values: Vec<f64>,
}

impl SheetGrid {
    pub fn value(&self, s_index: usize, t_index: usize) -> f64 {
        self.values[s_index * self.t_grid.len() + t_index]
    }

    /// The row `s = s_grid[s_index]` as a path in `t`.
    pub fn row(&self, s_index: usize) -> PathGrid {
        let k = self.t_grid.len();
        PathGrid {
            grid: self.t_grid.clone(),
            values: self.values[s_index * k..(s_index + 1) * k].to_vec(),
        }
    }

    /// The column `t = t_grid[t_index]` as a path in `s`.
    pub fn column(&self, t_index: usize) -> PathGrid {
        PathGrid {
            grid: self.s_grid.clone(),
            values: (0..self.s_grid.len())
                .map(|i| self.value(i, t_index))
                .collect(),
        }
    }
}

/// Kiefer–Müller field over `s_grid × {f_1..f_k}`, row-major in `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct KieferField {
    pub s_grid: Grid1D,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl KieferField {
    pub fn value(&self, s_index: usize, f_index: usize) -> f64 {
        self.values[s_index * self.dim + f_index]
    }
}

/// Covariance `Pf_i f_j - Pf_i Pf_j` of a finite function class, stored with a
/// square-root factor for simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    dim: usize,
    entries: Vec<f64>,
    factor: Vec<f64>,
}

impl CovMatrix {
    /// Validate symmetry and positive semidefiniteness (eigenvalues no lower
    /// than `-1e-10` times the spectral norm).
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, SimError> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(SimError::NotSquare);
        }
        Self::from_row_major(dim, rows.into_iter().flatten().collect())
    }

    pub fn from_row_major(dim: usize, entries: Vec<f64>) -> Result<Self, SimError> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(SimError::NotSquare);
        }
        let mut scale: f64 = 0.0;
        for (idx, v) in entries.iter().enumerate() {
            if !v.is_finite() {
                return Err(SimError::NonFiniteEntry {
                    row: idx / dim,
                    col: idx % dim,
                });
            }
            scale = scale.max(v.abs());
        }
        let sym_tol = 1e-12 * scale.max(1.0);
        for row in 0..dim {
            for col in row + 1..dim {
                if (entries[row * dim + col] - entries[col * dim + row]).abs() > sym_tol {
                    return Err(SimError::NotSymmetric { row, col });
                }
            }
        }
        let m = DMatrix::from_row_slice(dim, dim, &entries);
        let eig = SymmetricEigen::new(m);
        let spectral = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let lowest = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if lowest < -1e-10 * spectral {
            return Err(SimError::NotPositiveSemidefinite { eigenvalue: lowest });
        }
        let mut factor = vec![0.0; dim * dim];
        for col in 0..dim {
            let root = eig.eigenvalues[col].max(0.0).sqrt();
            for row in 0..dim {
                factor[row * dim + col] = eig.eigenvectors[(row, col)] * root;
            }
        }
        Ok(Self {
            dim,
            entries,
            factor,
        })
    }

    /// Covariance of `f_1..f_k` under a discrete law: `probs[a]` is the mass of
    /// atom `a` and `values[j][a] = f_j(atom a)`.
    pub fn from_discrete_law(probs: &[f64], values: &[Vec<f64>]) -> Result<Self, SimError> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(SimError::InvalidLaw("probabilities must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SimError::InvalidLaw(format!("probabilities sum to {total}")));
        }
        if values.is_empty() || values.iter().any(|f| f.len() != probs.len()) {
            return Err(SimError::InvalidLaw(
                "each function needs one value per atom".into(),
            ));
        }
        let k = values.len();
        let means: Vec<f64> = values
            .iter()
            .map(|f| f.iter().zip(probs).map(|(v, p)| v * p).sum())
            .collect();
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            for j in i..k {
                let pfg: f64 = probs
                    .iter()
                    .enumerate()
                    .map(|(a, p)| p * values[i][a] * values[j][a])
                    .sum();
                let c = pfg - means[i] * means[j];
                entries[i * k + j] = c;
                entries[j * k + i] = c;
            }
        }
        Self::from_row_major(k, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }
}

/// Maximum absolute value over all grid points.
///
/// This is a lower bound for the supremum of the underlying continuous
/// process; refining the grid can only raise it.
pub trait SupAbs {
    fn sup_abs(&self) -> f64;
}

impl SupAbs for [f64] {
    fn sup_abs(&self) -> f64 {
        self.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl SupAbs for Vec<f64> {
    fn sup_abs(&self) -> f64 {
        self.as_slice().sup_abs()
    }
}

impl SupAbs for PathGrid {
    fn sup_abs(&self) -> f64 {
        self.values.sup_abs()
    }
}

impl SupAbs for SheetGrid {
    fn sup_abs(&self) -> f64 {
        self.values.sup_abs()
    }
}

impl SupAbs for KieferField {
    fn sup_abs(&self) -> f64 {
        self.values.sup_abs()
    }
}

#[inline]
fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Brownian motion on `grid` written into `out` (`out.len() == grid.len()`).
pub fn fill_brownian_motion(grid: &Grid1D, rng: &mut StreamRng, out: &mut [f64]) {
    debug_assert_eq!(out.len(), grid.len());
    let mut acc = 0.0;
    for (o, sd) in out.iter_mut().zip(grid.sqrt_spacings()) {
        acc += sd * normal(rng);
        *o = acc;
    }
}

/// Brownian bridge on `grid`, via `B(s) - s B(1)`.
pub fn fill_brownian_bridge(grid: &Grid1D, rng: &mut StreamRng, out: &mut [f64]) {
    fill_brownian_motion(grid, rng, out);
    let end = *out.last().expect("grids are non-empty");
    for (o, s) in out.iter_mut().zip(grid.points()) {
        *o -= s * end;
    }
}

pub fn simulate_brownian_motion(grid: &Grid1D, seed: &SeedSpec) -> PathGrid {
    let mut values = vec![0.0; grid.len()];
    fill_brownian_motion(grid, &mut seed.rng(), &mut values);
    PathGrid {
        grid: grid.clone(),
        values,
    }
}

pub fn simulate_brownian_bridge(grid: &Grid1D, seed: &SeedSpec) -> PathGrid {
    let mut values = vec![0.0; grid.len()];
    fill_brownian_bridge(grid, &mut seed.rng(), &mut values);
    PathGrid {
        grid: grid.clone(),
        values,
    }
}

fn check_sheet(s_grid: &Grid1D, t_grid: &Grid1D) -> Result<usize, SimError> {
    if s_grid.len() < 2 || t_grid.len() < 2 {
        return Err(SimError::DegenerateSheet {
            s_len: s_grid.len(),
            t_len: t_grid.len(),
        });
    }
    let cells = s_grid
        .len()
        .checked_mul(t_grid.len())
        .unwrap_or(usize::MAX);
    if cells > MAX_SHEET_CELLS {
        return Err(SimError::SheetTooLarge {
            cells,
            budget: MAX_SHEET_CELLS,
        });
    }
    Ok(cells)
}

/// Brownian sheet: cumulative sums over both axes of independent rectangle
/// increments with variance `Δs·Δt`. Increments are drawn row by row.
pub fn simulate_brownian_sheet(
    s_grid: &Grid1D,
    t_grid: &Grid1D,
    seed: &SeedSpec,
) -> Result<SheetGrid, SimError> {
    let cells = check_sheet(s_grid, t_grid)?;
    let mut rng = seed.rng();
    let k = t_grid.len();
    let mut values = vec![0.0; cells];
    let mut prev_row = vec![0.0; k];
    for (i, sd_s) in s_grid.sqrt_spacings().iter().enumerate() {
        let row = &mut values[i * k..(i + 1) * k];
        let mut run = 0.0;
        for ((cell, above), sd_t) in row.iter_mut().zip(&prev_row).zip(t_grid.sqrt_spacings()) {
            run += sd_s * sd_t * normal(&mut rng);
            *cell = above + run;
        }
        prev_row.copy_from_slice(row);
    }
    Ok(SheetGrid {
        s_grid: s_grid.clone(),
        t_grid: t_grid.clone(),
        values,
    })
}

/// Supremum of |sheet| without materialising it. Consumes the stream exactly
/// as [`simulate_brownian_sheet`] does, so both give the same value for the
/// same stream. `column` is scratch of length `t_grid.len()`.
pub fn brownian_sheet_sup(
    s_grid: &Grid1D,
    t_grid: &Grid1D,
    rng: &mut StreamRng,
    column: &mut Vec<f64>,
) -> f64 {
    column.clear();
    column.resize(t_grid.len(), 0.0);
    let mut sup: f64 = 0.0;
    for sd_s in s_grid.sqrt_spacings() {
        let mut run = 0.0;
        for (cell, sd_t) in column.iter_mut().zip(t_grid.sqrt_spacings()) {
            run += sd_s * sd_t * normal(rng);
            *cell += run;
            sup = sup.max(cell.abs());
        }
    }
    sup
}

/// Kiefer–Müller field: cumulative sums over `s` of independent
/// `N(0, Δs·cov)` vectors.
pub fn simulate_kiefer_muller(s_grid: &Grid1D, cov: &CovMatrix, seed: &SeedSpec) -> KieferField {
    let mut values = vec![0.0; s_grid.len() * cov.dim];
    fill_kiefer_muller(s_grid, cov, &mut seed.rng(), &mut values, &mut Vec::new());
    KieferField {
        s_grid: s_grid.clone(),
        dim: cov.dim,
        values,
    }
}

/// Row-major Kiefer–Müller values into `out` (`s_grid.len() * cov.dim()`).
pub fn fill_kiefer_muller(
    s_grid: &Grid1D,
    cov: &CovMatrix,
    rng: &mut StreamRng,
    out: &mut [f64],
    z: &mut Vec<f64>,
) {
    let k = cov.dim;
    debug_assert_eq!(out.len(), s_grid.len() * k);
    z.clear();
    z.resize(k, 0.0);
    let mut prev: Option<usize> = None;
    for (i, sd) in s_grid.sqrt_spacings().iter().enumerate() {
        for zi in z.iter_mut() {
            *zi = normal(rng);
        }
        for row in 0..k {
            let f = &cov.factor[row * k..(row + 1) * k];
            let inc: f64 = f.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
            let base = prev.map_or(0.0, |p| out[p * k + row]);
            out[i * k + row] = base + sd * inc;
        }
        prev = Some(i);
    }
}

/// A process whose grid supremum can be sampled from a stream.
pub trait SupSampler: Sync {
    fn sample_sup(&self, rng: &mut StreamRng) -> f64;
    /// Points per axis of the underlying grid.
    fn resolution(&self) -> usize;
}

/// `sup |B|` of Brownian motion on a grid.
#[derive(Debug, Clone)]
pub struct BrownianMotionSup {
    pub grid: Grid1D,
}

impl SupSampler for BrownianMotionSup {
    fn sample_sup(&self, rng: &mut StreamRng) -> f64 {
        let mut acc: f64 = 0.0;
        let mut sup: f64 = 0.0;
        for sd in self.grid.sqrt_spacings() {
            acc += sd * normal(rng);
            sup = sup.max(acc.abs());
        }
        sup
    }
    fn resolution(&self) -> usize {
        self.grid.len()
    }
}

/// `sup |W°|` of a Brownian bridge on a grid.
#[derive(Debug, Clone)]
pub struct BrownianBridgeSup {
    pub grid: Grid1D,
}

impl SupSampler for BrownianBridgeSup {
    fn sample_sup(&self, rng: &mut StreamRng) -> f64 {
        let mut path = vec![0.0; self.grid.len()];
        fill_brownian_bridge(&self.grid, rng, &mut path);
        path.sup_abs()
    }
    fn resolution(&self) -> usize {
        self.grid.len()
    }
}

/// `sup |S|` of the Brownian sheet on `s_grid × t_grid`.
#[derive(Debug, Clone)]
pub struct BrownianSheetSup {
    pub s_grid: Grid1D,
    pub t_grid: Grid1D,
}

impl BrownianSheetSup {
    pub fn new(s_grid: Grid1D, t_grid: Grid1D) -> Result<Self, SimError> {
        check_sheet(&s_grid, &t_grid)?;
        Ok(Self { s_grid, t_grid })
    }

    /// Dyadic grid with `2^level` points on each axis.
    pub fn dyadic(level: u32) -> Self {
        Self::new(Grid1D::dyadic(level), Grid1D::dyadic(level)).expect("dyadic sheet is valid")
    }
}

impl SupSampler for BrownianSheetSup {
    fn sample_sup(&self, rng: &mut StreamRng) -> f64 {
        let mut column = Vec::new();
        brownian_sheet_sup(&self.s_grid, &self.t_grid, rng, &mut column)
    }
    fn resolution(&self) -> usize {
        self.s_grid.len().max(self.t_grid.len())
    }
}

/// `sup |Z|` of a Kiefer–Müller field over `(0,1] × {f_1..f_k}`.
#[derive(Debug, Clone)]
pub struct KieferMullerSup {
    pub s_grid: Grid1D,
    pub cov: CovMatrix,
}

impl SupSampler for KieferMullerSup {
    fn sample_sup(&self, rng: &mut StreamRng) -> f64 {
        let mut out = vec![0.0; self.s_grid.len() * self.cov.dim()];
        fill_kiefer_muller(&self.s_grid, &self.cov, rng, &mut out, &mut Vec::new());
        out.sup_abs()
    }
    fn resolution(&self) -> usize {
        self.s_grid.len()
    }
}

/// Pathwise multiple `factor · X` of another sampler.
#[derive(Debug, Clone)]
pub struct Scaled<S> {
    pub inner: S,
    pub factor: f64,
}

impl<S: SupSampler> SupSampler for Scaled<S> {
    fn sample_sup(&self, rng: &mut StreamRng) -> f64 {
        self.factor.abs() * self.inner.sample_sup(rng)
    }
    fn resolution(&self) -> usize {
        self.inner.resolution()
    }
}

/// The identically zero process.
#[derive(Debug, Clone, Copy)]
pub struct ZeroProcess {
    pub resolution: usize,
}

impl SupSampler for ZeroProcess {
    fn sample_sup(&self, _rng: &mut StreamRng) -> f64 {
        0.0
    }
    fn resolution(&self) -> usize {
        self.resolution
    }
}
