//! ADMM for `min ‖w‖₁ s.t. ‖Aw − y‖₂ ≤ δ`.
//!
//! Splitting `w = z`: the `w`-step projects onto the constraint set using a
//! thin SVD of `A`, the `z`-step soft-thresholds, and the scaled dual
//! accumulates `w − z`. The penalty is rebalanced by a factor of 2 whenever
//! one residual exceeds the other tenfold, checked every
//! `REBALANCE_PERIOD` iterations: rebalancing on every step lets the
//! iterates cycle instead of converging.
//!
//! After convergence the support of `z` is kept and the coefficients on it
//! are projected back onto the constraint set, so the returned vector is
//! both exactly sparse and feasible.

use nalgebra::{DMatrix, DVector};

use super::{PreparedDesign, RawSolution, SolverConfig, ThinSvd, PRUNE_RELATIVE};

const REBALANCE_PERIOD: usize = 10;

pub(crate) fn solve(design: &PreparedDesign, y: &DVector<f64>, cfg: &SolverConfig) -> RawSolution {
    let a = design.normalized();
    let n = a.ncols();
    let delta = cfg.noise_allowance;
    let proj = Projector::new(design.svd(), y);

    let mut rho = cfg.rho;
    let mut z = DVector::<f64>::zeros(n);
    let mut u = DVector::<f64>::zeros(n);
    let mut admm_converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let w = proj.project(&(&z - &u), delta);
        let z_old = std::mem::replace(&mut z, soft_threshold(&(&w + &u), 1.0 / rho));
        u += &w - &z;

        let r_norm = (&w - &z).norm();
        let s_norm = rho * (&z - &z_old).norm();
        let eps_pri = cfg.residual_tol * w.norm().max(z.norm()).max(1e-12);
        let eps_dual = cfg.residual_tol * (rho * u.norm()).max(1e-12);
        if r_norm <= eps_pri && s_norm <= eps_dual {
            admm_converged = true;
            break;
        }
        if iterations % REBALANCE_PERIOD != 0 {
            continue;
        }
        if r_norm > 10.0 * s_norm {
            rho *= 2.0;
            u /= 2.0;
        } else if s_norm > 10.0 * r_norm {
            rho /= 2.0;
            u *= 2.0;
        }
    }

    // Keep the thresholded support and restore feasibility on it.
    let z_max = z.amax();
    let support: Vec<usize> = (0..n)
        .filter(|&j| z[j] != 0.0 && z[j].abs() > PRUNE_RELATIVE * z_max)
        .collect();
    let mut coefficients = DVector::zeros(n);
    if !support.is_empty() {
        let sub = a.select_columns(&support);
        let sub_svd = ThinSvd::new(&sub);
        let sub_proj = Projector::new(&sub_svd, y);
        let z_sub = DVector::from_iterator(support.len(), support.iter().map(|&j| z[j]));
        let polished = sub_proj.project(&z_sub, delta);
        for (&j, &c) in support.iter().zip(polished.iter()) {
            coefficients[j] = c;
        }
    }
    let residual = (y - a * &coefficients).norm();
    let feasible = residual <= delta.max(cfg.residual_tol) + 1e-12;

    RawSolution {
        coefficients,
        converged: admm_converged && feasible,
        iterations,
        rank_deficient: false,
    }
}

fn soft_threshold(v: &DVector<f64>, t: f64) -> DVector<f64> {
    v.map(|x| {
        if x > t {
            x - t
        } else if x < -t {
            x + t
        } else {
            0.0
        }
    })
}

/// Euclidean projection onto `{w : ‖Aw − y‖ ≤ δ}`.
///
/// With `A = U S Vᵀ`, the minimizer of `‖w − v‖²` on the set is
/// `(I + μ AᵀA)⁻¹ (v + μ Aᵀ y)` for the multiplier `μ ≥ 0` that puts the
/// residual on the boundary. Everything reduces to the singular coordinates
/// `a = Vᵀv`, `b = Uᵀy`, where the residual is
/// `Σ (s a − b)² / (1 + μ s²)² + ‖y_⊥‖²`. When `δ` is not above `‖y_⊥‖`
/// (including `δ = 0`) the limit `μ → ∞` is taken, which is the projection
/// onto the least-squares solution set.
pub(crate) struct Projector<'a> {
    svd: &'a ThinSvd,
    b: DVector<f64>,
    perp_sq: f64,
}

impl<'a> Projector<'a> {
    pub fn new(svd: &'a ThinSvd, y: &DVector<f64>) -> Self {
        let b = svd.u.tr_mul(y);
        let perp_sq = (y.norm_squared() - b.norm_squared()).max(0.0);
        Self { svd, b, perp_sq }
    }

    pub fn project(&self, v: &DVector<f64>, delta: f64) -> DVector<f64> {
        let s = &self.svd.s;
        let a = &self.svd.v_t * v;
        let gap = s.component_mul(&a) - &self.b;
        let in_range_sq = |mu: f64| -> f64 {
            gap.iter()
                .zip(s.iter())
                .map(|(g, si)| (g / (1.0 + mu * si * si)).powi(2))
                .sum()
        };
        let target = delta * delta - self.perp_sq;
        let correction: DVector<f64> = if delta == 0.0 || target <= 0.0 {
            // μ → ∞: Vᵀw = b / s.
            DVector::from_iterator(s.len(), (0..s.len()).map(|i| -gap[i] / s[i]))
        } else if in_range_sq(0.0) <= target {
            return v.clone();
        } else {
            let mu = solve_multiplier(&in_range_sq, target);
            DVector::from_iterator(
                s.len(),
                (0..s.len()).map(|i| -mu * s[i] * gap[i] / (1.0 + mu * s[i] * s[i])),
            )
        };
        v + self.svd.v_t.tr_mul(&correction)
    }
}

/// Finds `μ > 0` with `f(μ) = target`, `f` strictly decreasing from
/// `f(0) > target` to `0`.
fn solve_multiplier(f: &dyn Fn(f64) -> f64, target: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f(hi) > target {
        lo = hi;
        hi *= 4.0;
        if hi > 1e300 {
            return hi;
        }
    }
    // Bisection on log scale once the bracket is positive.
    for _ in 0..200 {
        let mid = if lo == 0.0 { hi / 2.0 } else { (lo * hi).sqrt() };
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

#[allow(dead_code)]
pub(crate) fn project_dense(a: &DMatrix<f64>, y: &DVector<f64>, v: &DVector<f64>, delta: f64) -> DVector<f64> {
    let svd = ThinSvd::new(a);
    Projector::new(&svd, y).project(v, delta)
}
