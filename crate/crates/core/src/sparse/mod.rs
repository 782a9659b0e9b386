//! Sparse linear regression `y ≈ X w` with two interchangeable solvers:
//! regularized orthogonal matching pursuit and an alternating-direction
//! method for `min ‖w‖₁ s.t. ‖Xw − y‖₂ ≤ δ`.
//!
//! Both solvers see a column-normalized copy of the design (unit ℓ2 norm per
//! column; non-intercept columns are also centered when the last column is
//! an intercept) and a target scaled to unit norm. Weights are mapped back
//! to the caller's scale on output, so results are equivariant under
//! `y → c·y`.

mod admm;
mod lstsq;
mod romp;

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

pub use lstsq::{least_squares_on_support, LeastSquares};

use crate::error::{Error, Result};
use crate::io::RowMatrix;

/// Voxel responses with an appended all-ones intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
}

impl DesignMatrix {
    /// Validates an `m × (n+1)` matrix whose last column is the intercept.
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() < 1 || x.ncols() < 2 {
            return Err(Error::Dimension(format!(
                "design matrix needs m >= 1 rows and n >= 1 voxel columns, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("design matrix has non-finite entries".into()));
        }
        if x.column(x.ncols() - 1).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidArgument(
                "last design-matrix column must be all ones".into(),
            ));
        }
        Ok(Self { x })
    }

    /// Appends the intercept column to an `m × n` response matrix.
    pub fn from_responses(responses: &RowMatrix) -> Result<Self> {
        let (m, n) = (responses.rows, responses.cols);
        let x = DMatrix::from_fn(m, n + 1, |i, j| if j == n { 1.0 } else { responses.get(i, j) });
        Self::new(x)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    /// Voxel count `n` (columns minus intercept).
    pub fn n_voxels(&self) -> usize {
        self.x.ncols() - 1
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(self.x.select_rows(rows))
    }

    pub fn to_row_matrix(&self) -> RowMatrix {
        let (m, c) = self.x.shape();
        RowMatrix {
            rows: m,
            cols: c,
            data: (0..m).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| self.x[(i, j)]).collect(),
        }
    }

    pub fn from_row_matrix(m: &RowMatrix) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(m.rows, m.cols, &m.data))
    }
}

/// Sorted `(index, coefficient)` pairs of a vector of length `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseWeights {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

/// Relative magnitude below which coefficients are dropped.
pub const PRUNE_RELATIVE: f64 = 1e-10;

impl SparseWeights {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        let ok = entries.windows(2).all(|w| w[0].0 < w[1].0)
            && entries
                .iter()
                .all(|&(i, c)| i < dim && c != 0.0 && c.is_finite());
        if !ok {
            return Err(Error::InvalidArgument(
                "sparse entries must have strictly increasing in-range indices and nonzero finite coefficients".into(),
            ));
        }
        Ok(Self { dim, entries })
    }

    /// Keeps entries with `|c| > rel · max|c|`.
    pub fn from_dense(dense: &[f64], rel: f64) -> Self {
        let max = dense.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cut = rel * max;
        let entries = dense
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0 && c.abs() > cut && c.is_finite())
            .map(|(i, &c)| (i, c))
            .collect();
        Self {
            dim: dense.len(),
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(i, _)| i)
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, c) in &self.entries {
            out[i] = c;
        }
        out
    }

    pub fn dot(&self, row: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, c)| c * row[i]).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|(_, c)| c.abs()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Romp,
    L1Admm,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Romp => "romp",
            SolverKind::L1Admm => "l1_admm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "romp" => Ok(SolverKind::Romp),
            "l1_admm" | "l1" | "admm" => Ok(SolverKind::L1Admm),
            other => Err(Error::InvalidArgument(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub solver: SolverKind,
    /// ROMP target support size; the pursuit stops at `2 * sparsity_k`.
    pub sparsity_k: usize,
    /// Relative stopping tolerance (residual for ROMP, primal/dual for ADMM).
    pub residual_tol: f64,
    pub max_iterations: usize,
    /// Initial ADMM penalty.
    pub rho: f64,
    /// Noise allowance as a fraction of ‖y‖: the ADMM constraint is
    /// `‖Xw − y‖ ≤ noise_allowance · ‖y‖`. Zero gives basis pursuit.
    pub noise_allowance: f64,
    /// Center voxel columns when the design carries an intercept column.
    pub center: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::Romp,
            sparsity_k: 32,
            residual_tol: 1e-8,
            max_iterations: 10_000,
            rho: 1.0,
            noise_allowance: 0.05,
            center: true,
        }
    }
}

impl SolverConfig {
    /// Settings for noiseless recovery benchmarks: exact constraints, tight
    /// tolerances.
    pub fn recovery(solver: SolverKind, sparsity_k: usize) -> Self {
        Self {
            solver,
            sparsity_k,
            residual_tol: 1e-10,
            max_iterations: 20_000,
            noise_allowance: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sparsity_k == 0 {
            return Err(Error::InvalidArgument("sparsity_k must be >= 1".into()));
        }
        if !(self.residual_tol > 0.0) || !(self.rho > 0.0) {
            return Err(Error::InvalidArgument("tolerance and rho must be > 0".into()));
        }
        if !(self.noise_allowance >= 0.0) || !self.noise_allowance.is_finite() {
            return Err(Error::InvalidArgument("noise allowance must be >= 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub weights: SparseWeights,
    pub converged: bool,
    pub iterations: usize,
    /// `‖Xw − y‖` of the returned weights, on the caller's scale.
    pub residual_norm: f64,
    pub rank_deficient: bool,
}

/// Column-normalized copy of a design, reusable across many targets.
pub struct PreparedDesign {
    a: DMatrix<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
    intercept: Option<usize>,
    original: DMatrix<f64>,
    svd: OnceLock<ThinSvd>,
}

/// `A = U diag(s) Vᵀ` keeping only numerically nonzero singular values.
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl ThinSvd {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let svd = a.clone().svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested Vᵀ");
        let s_max = svd.singular_values.max();
        let tol = s_max * a.nrows().max(a.ncols()) as f64 * f64::EPSILON;
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > tol)
            .collect();
        Self {
            u: u.select_columns(&keep),
            s: DVector::from_iterator(keep.len(), keep.iter().map(|&i| svd.singular_values[i])),
            v_t: v_t.select_rows(&keep),
        }
    }
}

impl PreparedDesign {
    pub fn new(x: &DMatrix<f64>, center: bool) -> Self {
        let (m, cols) = x.shape();
        let intercept = (cols >= 2 && x.column(cols - 1).iter().all(|&v| v == 1.0)).then_some(cols - 1);
        let mut a = x.clone();
        let mut means = vec![0.0; cols];
        let mut scales = vec![1.0; cols];
        for j in 0..cols {
            let mut col = a.column_mut(j);
            if center && intercept.is_some() && Some(j) != intercept {
                let mu = col.sum() / m as f64;
                col.add_scalar_mut(-mu);
                means[j] = mu;
            }
            let norm = col.norm();
            // Columns that are (numerically) constant after centering carry
            // no information; zero them so they are never selected.
            let reference = if Some(j) == intercept { 0.0 } else { means[j].abs() };
            if norm <= 1e-12 * reference.max(1e-300) * (m as f64).sqrt() || norm == 0.0 {
                col.fill(0.0);
                scales[j] = 0.0;
            } else {
                col.unscale_mut(norm);
                scales[j] = norm;
            }
        }
        Self {
            a,
            means,
            scales,
            intercept,
            original: x.clone(),
            svd: OnceLock::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    pub(crate) fn normalized(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub(crate) fn svd(&self) -> &ThinSvd {
        self.svd.get_or_init(|| ThinSvd::new(&self.a))
    }

    /// Maps coefficients of the normalized problem back to the original
    /// columns.
    fn unscale(&self, v: &[f64], y_norm: f64) -> Vec<f64> {
        let mut w: Vec<f64> = v
            .iter()
            .zip(&self.scales)
            .map(|(&c, &s)| if s == 0.0 { 0.0 } else { c * y_norm / s })
            .collect();
        if let Some(b) = self.intercept {
            let shift: f64 = w
                .iter()
                .zip(&self.means)
                .enumerate()
                .filter(|&(j, _)| j != b)
                .map(|(_, (wj, mu))| wj * mu)
                .sum();
            w[b] -= shift;
        }
        w
    }

    fn residual_norm(&self, w: &SparseWeights, y: &[f64]) -> f64 {
        (0..self.original.nrows())
            .map(|i| {
                let pred: f64 = w.entries().iter().map(|&(j, c)| c * self.original[(i, j)]).sum();
                (pred - y[i]).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn solve(&self, y: &[f64], cfg: &SolverConfig) -> Result<SolveOutcome> {
        cfg.validate()?;
        if y.len() != self.rows() {
            return Err(Error::Dimension(format!(
                "target has {} entries, design has {} rows",
                y.len(),
                self.rows()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("target has non-finite entries".into()));
        }
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if y_norm == 0.0 {
            return Ok(SolveOutcome {
                weights: SparseWeights::empty(self.cols()),
                converged: true,
                iterations: 0,
                residual_norm: 0.0,
                rank_deficient: false,
            });
        }
        let y_unit = DVector::from_iterator(y.len(), y.iter().map(|v| v / y_norm));
        let raw = match cfg.solver {
            SolverKind::Romp => romp::solve(self, &y_unit, cfg),
            SolverKind::L1Admm => admm::solve(self, &y_unit, cfg),
        };
        let dense = self.unscale(raw.coefficients.as_slice(), y_norm);
        let weights = SparseWeights::from_dense(&dense, PRUNE_RELATIVE);
        let residual_norm = self.residual_norm(&weights, y);
        Ok(SolveOutcome {
            weights,
            converged: raw.converged,
            iterations: raw.iterations,
            residual_norm,
            rank_deficient: raw.rank_deficient,
        })
    }
}

/// Solver output on the normalized problem.
pub(crate) struct RawSolution {
    pub coefficients: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub rank_deficient: bool,
}

fn check_dims(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "target has {} entries, design has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Dimension("empty design matrix".into()));
    }
    Ok(())
}

/// Regularized orthogonal matching pursuit on an arbitrary matrix.
pub fn romp_solve(x: &DMatrix<f64>, y: &[f64], cfg: &SolverConfig) -> Result<SolveOutcome> {
    check_dims(x, y)?;
    let cfg = SolverConfig {
        solver: SolverKind::Romp,
        ..cfg.clone()
    };
    PreparedDesign::new(x, cfg.center).solve(y, &cfg)
}

/// Alternating-direction ℓ1 minimization on an arbitrary matrix.
pub fn l1_admm_solve(x: &DMatrix<f64>, y: &[f64], cfg: &SolverConfig) -> Result<SolveOutcome> {
    check_dims(x, y)?;
    let cfg = SolverConfig {
        solver: SolverKind::L1Admm,
        ..cfg.clone()
    };
    PreparedDesign::new(x, cfg.center).solve(y, &cfg)
}

/// Dispatches on `cfg.solver`.
pub fn solve(x: &DesignMatrix, y: &[f64], cfg: &SolverConfig) -> Result<SolveOutcome> {
    check_dims(x.matrix(), y)?;
    PreparedDesign::new(x.matrix(), cfg.center).solve(y, cfg)
}
