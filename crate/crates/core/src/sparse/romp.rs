//! Regularized orthogonal matching pursuit.
//!
//! Each round correlates the residual with every column, keeps the `k`
//! strongest candidates, and admits the run of candidates with comparable
//! magnitudes (`max ≤ 2·min`) that carries the most energy. Coefficients are
//! refit by least squares on the accumulated support.

use nalgebra::DVector;

use super::lstsq::solve_dense;
use super::{PreparedDesign, RawSolution, SolverConfig};

pub(crate) fn solve(design: &PreparedDesign, y: &DVector<f64>, cfg: &SolverConfig) -> RawSolution {
    let a = design.normalized();
    let k = cfg.sparsity_k;
    let mut in_support = vec![false; a.ncols()];
    let mut support: Vec<usize> = Vec::new();
    let mut coefficients = DVector::zeros(a.ncols());
    let mut residual = y.clone();
    let mut rank_deficient = false;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        if residual.norm() <= cfg.residual_tol {
            converged = true;
            break;
        }
        if support.len() >= 2 * k {
            break;
        }
        iterations += 1;

        let u = a.tr_mul(&residual);
        let mut candidates: Vec<(usize, f64)> = u
            .iter()
            .enumerate()
            .filter(|&(j, &c)| !in_support[j] && c != 0.0)
            .map(|(j, &c)| (j, c.abs()))
            .collect();
        if candidates.is_empty() {
            break;
        }
        // Descending magnitude, ties by index for determinism.
        candidates.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        candidates.truncate(k);

        let chosen = comparable_run(&candidates);
        for &(j, _) in chosen {
            in_support[j] = true;
        }
        support = (0..a.ncols()).filter(|&j| in_support[j]).collect();

        let (c, deficient) = solve_dense(a.select_columns(&support), y);
        rank_deficient = deficient;
        coefficients.fill(0.0);
        for (&j, &cj) in support.iter().zip(c.iter()) {
            coefficients[j] = cj;
        }
        residual = y - a * &coefficients;
    }
    if !converged && residual.norm() <= cfg.residual_tol {
        converged = true;
    }

    RawSolution {
        coefficients,
        converged,
        iterations,
        rank_deficient,
    }
}

/// Among candidates sorted by descending magnitude, the contiguous run with
/// `first ≤ 2·last` of maximal energy. Earliest run wins ties.
pub(crate) fn comparable_run(sorted: &[(usize, f64)]) -> &[(usize, f64)] {
    let mut best = (0, 0, -1.0);
    let mut end = 0;
    let mut energy = 0.0;
    for start in 0..sorted.len() {
        if end < start {
            end = start;
            energy = 0.0;
        }
        while end < sorted.len() && sorted[start].1 <= 2.0 * sorted[end].1 {
            energy += sorted[end].1 * sorted[end].1;
            end += 1;
        }
        if energy > best.2 {
            best = (start, end, energy);
        }
        energy -= sorted[start].1 * sorted[start].1;
    }
    &sorted[best.0..best.1]
}
