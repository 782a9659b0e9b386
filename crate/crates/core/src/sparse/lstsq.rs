use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    /// Coefficients in the order of the requested support.
    pub coefficients: Vec<f64>,
    /// Set when the support columns are numerically dependent; the
    /// coefficients are then the minimum-norm minimizer.
    pub rank_deficient: bool,
}

/// Minimizes `‖X[:, support] c − y‖₂`.
///
/// Uses Householder QR when the columns are well separated and falls back to
/// the SVD pseudo-inverse (minimum-norm solution) otherwise.
pub fn least_squares_on_support(
    x: &DMatrix<f64>,
    y: &[f64],
    support: &[usize],
) -> Result<LeastSquares> {
    if y.len() != x.nrows() {
        return Err(Error::Dimension(format!(
            "target has {} entries, design has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    if let Some(&bad) = support.iter().find(|&&j| j >= x.ncols()) {
        return Err(Error::InvalidArgument(format!(
            "support index {bad} out of range for {} columns",
            x.ncols()
        )));
    }
    let sub = x.select_columns(support);
    let y = DVector::from_column_slice(y);
    let (c, rank_deficient) = solve_dense(sub, &y);
    Ok(LeastSquares {
        coefficients: c.as_slice().to_vec(),
        rank_deficient,
    })
}

pub(crate) fn solve_dense(a: DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, bool) {
    let (m, k) = a.shape();
    if k == 0 {
        return (DVector::zeros(0), false);
    }
    if k <= m {
        let qr = a.clone().qr();
        let r = qr.r();
        let diag_max = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let diag_min = (0..k).map(|i| r[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        // |R_ii| bounds the smallest singular value only loosely; be
        // conservative and let the SVD decide when in doubt.
        if diag_max > 0.0 && diag_min > diag_max * 1e-8 {
            let qty = qr.q().transpose() * y;
            if let Some(c) = r.solve_upper_triangular(&qty) {
                return (c, false);
            }
        }
    }
    let tol = a.nrows().max(a.ncols()) as f64 * f64::EPSILON;
    let svd = a.svd(true, true);
    let s_max = svd.singular_values.max();
    let cut = tol * s_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
    let c = svd
        .solve(y, cut.max(f64::MIN_POSITIVE))
        .expect("U and Vᵀ were computed");
    (c, rank < k)
}
