//! Oracles shared by integration tests. Nothing here calls into the
//! gradient or solver code it is used to check.
#![allow(dead_code)]

use cnn_recon::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random::<f64>())
}

pub fn gaussian_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| gaussian(rng))
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller, kept local so the oracle does not share sampling code.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn unit_direction(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let d = gaussian_tensor(shape, rng);
    let n = d.norm_sq().sqrt();
    d.scale(1.0 / n)
}

/// Central difference of `f` at `x` along `d`.
pub fn central_difference(f: impl Fn(&Tensor) -> f64, x: &Tensor, d: &Tensor, h: f64) -> f64 {
    let mut plus = x.clone();
    plus.axpy(h, d);
    let mut minus = x.clone();
    minus.axpy(-h, d);
    (f(&plus) - f(&minus)) / (2.0 * h)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Planted sparse instance: `m × n` Gaussian matrix with unit-norm columns,
/// `k` nonzero coefficients of random sign and unit magnitude at random
/// positions, `y = X w`.
pub struct PlantedInstance {
    pub x: nalgebra::DMatrix<f64>,
    pub w: Vec<f64>,
    pub support: Vec<usize>,
    pub y: Vec<f64>,
}

pub fn planted_instance(m: usize, n: usize, k: usize, seed: u64) -> PlantedInstance {
    use rand::seq::index::sample;
    let mut rng = rng(seed);
    let mut x = nalgebra::DMatrix::from_fn(m, n, |_, _| gaussian(&mut rng));
    for mut col in x.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    let mut support: Vec<usize> = sample(&mut rng, n, k).into_vec();
    support.sort_unstable();
    let mut w = vec![0.0; n];
    for &j in &support {
        w[j] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let y = (0..m)
        .map(|i| support.iter().map(|&j| x[(i, j)] * w[j]).sum())
        .collect();
    PlantedInstance { x, w, support, y }
}

/// Columns orthonormal and orthogonal to the all-ones vector, followed by
/// an intercept column.
pub fn orthonormal_design(m: usize, n: usize, seed: u64) -> nalgebra::DMatrix<f64> {
    let mut rng = rng(seed);
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (m as f64).sqrt(); m]];
    while basis.len() < n + 1 {
        let mut v: Vec<f64> = (0..m).map(|_| gaussian(&mut rng)).collect();
        // Two Gram-Schmidt passes for orthogonality to machine precision.
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= d * c);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        basis.push(v.into_iter().map(|a| a / norm).collect());
    }
    nalgebra::DMatrix::from_fn(m, n + 1, |i, j| if j == n { 1.0 } else { basis[j + 1][i] })
}

/// Textbook two-pass Pearson correlation; `None` for a constant input.
pub fn pearson_oracle(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Held-out mean Pearson r of a dense ridge regression on standardized
/// voxel columns. The penalty is chosen on the last sixth of the training
/// rows from a 1e-8..1e4 grid, then refit on all of them.
pub fn ridge_oracle(
    x_train: &nalgebra::DMatrix<f64>,
    f_train: &nalgebra::DMatrix<f64>,
    x_test: &nalgebra::DMatrix<f64>,
    f_test: &nalgebra::DMatrix<f64>,
) -> f64 {
    use nalgebra::DMatrix;
    let (mut x1, mut x2) = (x_train.clone(), x_test.clone());
    let n = x1.ncols() - 1; // trailing intercept column stays unpenalized
    for j in 0..n {
        let mu = x1.column(j).mean();
        let sd = x1.column(j).map(|v| (v - mu).powi(2)).mean().sqrt().max(1e-300);
        x1.column_mut(j).apply(|v| *v = (*v - mu) / sd);
        x2.column_mut(j).apply(|v| *v = (*v - mu) / sd);
    }
    let fit_and_score = |x: &DMatrix<f64>, f: &DMatrix<f64>, xt: &DMatrix<f64>, ft: &DMatrix<f64>, lam: f64| {
        let mut g = x.transpose() * x;
        for i in 0..n {
            g[(i, i)] += lam;
        }
        let w = g.lu().solve(&(x.transpose() * f)).expect("regularized system");
        let p = xt * w;
        let rs: Vec<f64> = (0..f.ncols())
            .filter_map(|j| pearson_oracle(ft.column(j).as_slice(), p.column(j).as_slice()))
            .collect();
        rs.iter().sum::<f64>() / rs.len() as f64
    };
    let m = x1.nrows();
    let cut = m - m / 6;
    let (xa, xb) = (x1.rows(0, cut).into_owned(), x1.rows(cut, m - cut).into_owned());
    let (fa, fb) = (f_train.rows(0, cut).into_owned(), f_train.rows(cut, m - cut).into_owned());
    let lam = (-8..=4)
        .map(|e| 10f64.powi(e))
        .map(|lam| (fit_and_score(&xa, &fa, &xb, &fb, lam), lam))
        .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a })
        .1;
    fit_and_score(&x1, f_train, &x2, f_test, lam)
}

/// Γ at a positive integer or half-integer, from factorials.
pub fn gamma_half_integer(x: f64) -> f64 {
    let twice = (2.0 * x).round() as u64;
    assert!(twice >= 1 && (2.0 * x - twice as f64).abs() < 1e-12);
    if twice.is_multiple_of(2) {
        (1..twice / 2).map(|k| k as f64).product()
    } else {
        // Γ(k + 1/2) = (2k)! √π / (4^k k!)
        let k = twice / 2;
        let mut g = std::f64::consts::PI.sqrt();
        for i in 0..k {
            g *= (2 * i + 1) as f64 / 2.0;
        }
        g
    }
}

/// Student-t CDF by adaptive Simpson quadrature of the density over [0, t].
pub fn student_t_cdf_oracle(t: f64, df: u32) -> f64 {
    let nu = df as f64;
    let c = gamma_half_integer((nu + 1.0) / 2.0) / ((nu * std::f64::consts::PI).sqrt() * gamma_half_integer(nu / 2.0));
    let pdf = |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    0.5 + adaptive_simpson(&pdf, 0.0, t, 1e-14, 50)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (l, r) = (simpson(f, a, m), simpson(f, m, b));
        if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
            l + r + (l + r - whole) / 15.0
        } else {
            rec(f, a, m, l, tol / 2.0, depth - 1) + rec(f, m, b, r, tol / 2.0, depth - 1)
        }
    }
    rec(f, a, b, simpson(f, a, b), tol, depth)
}
