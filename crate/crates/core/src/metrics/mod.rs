//! Correlation, t-tests and the complex-wavelet structural similarity used
//! to score reconstructions.

mod cwssim;

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub use cwssim::{
    chance_baseline, complex_pyramid, cwssim, gabor_factors, write_cwssim_report, ChanceBaseline,
    CwssimParams, CwssimSummary, PairScores, Subband,
};

use crate::error::{Error, Result};

/// Pearson correlation, clamped to `[-1, 1]`.
///
/// A vector with no variance makes the correlation undefined, reported as
/// [`Error::Undefined`].
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "pearson of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least 2 samples".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(a) || constant(b) {
        return Err(Error::Undefined("correlation with a constant vector".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("correlation with a constant vector".into()));
    }
    // sqrt(s·s) == s exactly, so identical inputs give exactly ±1.
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    /// `P(T ≥ t)`: evidence that the mean exceeds the reference.
    pub p_one_sided: f64,
}

/// Student-t cumulative distribution function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("degrees of freedom must be positive")
        .cdf(t)
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

pub fn one_sample_ttest(values: &[f64], mu0: f64) -> Result<TTest> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidArgument("t-test needs at least 2 values".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // A spread at round-off level (e.g. differences of `b + c` and `b`) is
    // treated as no spread at all.
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if var.sqrt() <= 64.0 * f64::EPSILON * scale || values.iter().all(|&v| v == values[0]) {
        return Err(Error::Undefined("t-test on values with zero variance".into()));
    }
    let t = (mean - mu0) / (var.sqrt() / (n as f64).sqrt());
    let df = (n - 1) as f64;
    // Both tails from the lower CDF keep precision for large |t|.
    let p_two_sided = (2.0 * student_t_cdf(-t.abs(), df)).min(1.0);
    let p_one_sided = student_t_cdf(-t, df);
    Ok(TTest {
        t,
        df,
        p_two_sided,
        p_one_sided,
    })
}

/// One-sample test of the differences `a − b` against zero.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "paired samples of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    one_sample_ttest(&diffs, 0.0)
}
