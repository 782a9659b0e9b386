//! Complex-wavelet structural similarity.
//!
//! Each pyramid level filters the image with `O` oriented complex Gabor
//! kernels (real and imaginary parts form a quadrature pair), then blurs with
//! a binomial lowpass and keeps every second sample for the next level. The
//! kernels are separable: an isotropic Gaussian envelope times a plane wave
//! factors into a horizontal and a vertical 1-D kernel. One factor is made
//! zero-mean so the 2-D kernel ignores constant offsets.
//!
//! Similarity between two images compares their coefficients `c`, `d` in
//! every sliding window of every subband:
//! `(2|Σ c d*| + K) / (Σ|c|² + Σ|d|² + K)`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::one_sample_ttest;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const RADIUS: usize = 3;
const SIGMA: f64 = 1.2;
/// Radians per pixel; a period of four pixels at every level.
const FREQUENCY: f64 = PI / 2.0;
const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[derive(Debug, Clone, PartialEq)]
pub struct CwssimParams {
    pub levels: usize,
    pub orientations: usize,
    /// Side of the square sliding window (clipped to small subbands).
    pub window: usize,
    /// Stabilizer per coefficient; the constant in the window term is
    /// `k · window²`.
    pub k: f64,
    /// Nonnegative, one per level, summing to 1.
    pub level_weights: Vec<f64>,
}

impl Default for CwssimParams {
    fn default() -> Self {
        Self::uniform(3, 4)
    }
}

impl CwssimParams {
    pub fn uniform(levels: usize, orientations: usize) -> Self {
        Self {
            levels,
            orientations,
            window: 7,
            k: 0.03,
            level_weights: vec![1.0 / levels.max(1) as f64; levels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("cwssim: {m}")));
        if self.levels == 0 {
            return bad("levels must be >= 1");
        }
        if self.orientations < 2 {
            return bad("orientations must be >= 2");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if !(self.k > 0.0) || !self.k.is_finite() {
            return bad("stabilizing constant must be > 0");
        }
        if self.level_weights.len() != self.levels
            || self.level_weights.iter().any(|&w| !(w >= 0.0))
            || (self.level_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad("level weights must be nonnegative, one per level, summing to 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subband {
    /// Zero-based: level 0 is full resolution.
    pub level: usize,
    pub orientation: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major.
    pub coeffs: Vec<Complex64>,
}

/// Horizontal and vertical 1-D factors of each oriented kernel; the 2-D
/// kernel is `h[r][c] = vertical[r] · horizontal[c]`, taps indexed from
/// `-RADIUS` to `RADIUS`.
pub fn gabor_factors(orientations: usize) -> Vec<(Vec<Complex64>, Vec<Complex64>)> {
    let taps = || (-(RADIUS as isize)..=RADIUS as isize).map(|t| t as f64);
    let envelope: Vec<f64> = taps().map(|t| (-t * t / (2.0 * SIGMA * SIGMA)).exp()).collect();
    let env_sum: f64 = envelope.iter().sum();
    (0..orientations)
        .map(|o| {
            let theta = PI * o as f64 / orientations as f64;
            let (wx, wy) = (FREQUENCY * theta.cos(), FREQUENCY * theta.sin());
            let wave = |w: f64| -> Vec<Complex64> {
                taps()
                    .zip(&envelope)
                    .map(|(t, &g)| Complex64::from_polar(g, w * t))
                    .collect()
            };
            let (mut hx, mut hy) = (wave(wx), wave(wy));
            // Zero the mean of the factor carrying more of the oscillation.
            let target = if wx.abs() >= wy.abs() { &mut hx } else { &mut hy };
            let dc: Complex64 = target.iter().sum::<Complex64>() / env_sum;
            for (h, &g) in target.iter_mut().zip(&envelope) {
                *h -= dc * g;
            }
            (hx, hy)
        })
        .collect()
}

/// Half-sample symmetric reflection of `i` into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn filter_rows<T, K>(src: &[T], h: usize, w: usize, kernel: &[K]) -> Vec<Complex64>
where
    T: Copy + Into<Complex64>,
    K: Copy + Into<Complex64>,
{
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &k) in kernel.iter().enumerate() {
                let v: Complex64 = row[reflect(x as isize + t as isize - r, w)].into();
                acc += k.into() * v;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn filter_cols<K: Copy + Into<Complex64>>(src: &[Complex64], h: usize, w: usize, kernel: &[K]) -> Vec<Complex64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &k) in kernel.iter().enumerate() {
                acc += k.into() * src[reflect(y as isize + t as isize - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Binomial blur, then every second sample: extents become `ceil(n / 2)`.
fn reduce(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let blurred = filter_cols(&filter_rows(img, h, w, &BINOMIAL), h, w, &BINOMIAL);
    let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(h2 * w2);
    for y in 0..h2 {
        for x in 0..w2 {
            out.push(blurred[2 * y * w + 2 * x].re);
        }
    }
    (out, h2, w2)
}

fn single_channel(image: &Tensor) -> Result<(usize, usize)> {
    match *image.shape() {
        [h, w] | [1, h, w] => Ok((h, w)),
        _ => Err(Error::InvalidArgument(format!(
            "cwssim expects a single-channel image, got shape {:?}",
            image.shape()
        ))),
    }
}

pub fn complex_pyramid(image: &Tensor, params: &CwssimParams) -> Result<Vec<Subband>> {
    params.validate()?;
    let (h, w) = single_channel(image)?;
    let min_extent = 1usize << params.levels;
    if h < min_extent || w < min_extent {
        return Err(Error::InvalidArgument(format!(
            "{h}x{w} image is too small for {} pyramid levels (needs {min_extent} per side)",
            params.levels
        )));
    }
    let factors = gabor_factors(params.orientations);
    let mut bands = Vec::with_capacity(params.levels * params.orientations);
    let (mut img, mut h, mut w) = (image.data().to_vec(), h, w);
    for level in 0..params.levels {
        for (orientation, (hx, hy)) in factors.iter().enumerate() {
            let coeffs = filter_cols(&filter_rows(&img, h, w, hx), h, w, hy);
            bands.push(Subband {
                level,
                orientation,
                height: h,
                width: w,
                coeffs,
            });
        }
        if level + 1 < params.levels {
            (img, h, w) = reduce(&img, h, w);
        }
    }
    Ok(bands)
}

/// Mean window term over all sliding windows of one subband pair.
fn subband_similarity(c: &Subband, d: &Subband, window: usize, k: f64) -> f64 {
    let (h, w) = (c.height, c.width);
    let win = window.min(h).min(w);
    let kk = k * (win * win) as f64;
    let n = h * w;
    // Per-coefficient terms; the same expression serves |c|² and |d|² so a
    // self-comparison reproduces them bit-for-bit.
    let mut cross_re = Vec::with_capacity(n);
    let mut cross_im = Vec::with_capacity(n);
    let mut ec = Vec::with_capacity(n);
    let mut ed = Vec::with_capacity(n);
    for (a, b) in c.coeffs.iter().zip(&d.coeffs) {
        cross_re.push(a.re * b.re + a.im * b.im);
        cross_im.push(a.im * b.re - a.re * b.im);
        ec.push(a.re * a.re + a.im * a.im);
        ed.push(b.re * b.re + b.im * b.im);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - win {
        for x0 in 0..=w - win {
            let (mut sr, mut si, mut sc, mut sd) = (0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + win {
                for i in y * w + x0..y * w + x0 + win {
                    sr += cross_re[i];
                    si += cross_im[i];
                    sc += ec[i];
                    sd += ed[i];
                }
            }
            let term = (2.0 * sr.hypot(si) + kk) / (sc + sd + kk);
            total += term.min(1.0);
            count += 1;
        }
    }
    total / count as f64
}

fn score_pyramids(a: &[Subband], b: &[Subband], params: &CwssimParams) -> f64 {
    let mut level_scores = vec![0.0; params.levels];
    for (ca, cb) in a.iter().zip(b) {
        level_scores[ca.level] += subband_similarity(ca, cb, params.window, params.k);
    }
    level_scores
        .iter()
        .zip(&params.level_weights)
        .map(|(s, wgt)| wgt * s / params.orientations as f64)
        .sum()
}

pub fn cwssim(a: &Tensor, b: &Tensor, params: &CwssimParams) -> Result<f64> {
    if single_channel(a)? != single_channel(b)? {
        return Err(Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    let pa = complex_pyramid(a, params)?;
    let pb = complex_pyramid(b, params)?;
    Ok(score_pyramids(&pa, &pb, params))
}

/// All reconstruction-versus-stimulus scores, `scores[i][j]` comparing
/// reconstruction `i` with stimulus `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    n: usize,
    scores: Vec<f64>,
}

impl PairScores {
    pub fn compute(recons: &[Tensor], stimuli: &[Tensor], params: &CwssimParams) -> Result<Self> {
        if recons.len() != stimuli.len() {
            return Err(Error::Dimension(format!(
                "{} reconstructions for {} stimuli",
                recons.len(),
                stimuli.len()
            )));
        }
        let n = recons.len();
        let shape = |t: &Tensor| single_channel(t);
        for t in recons.iter().chain(stimuli) {
            if shape(t)? != shape(&stimuli[0])? {
                return Err(Error::ShapeMismatch {
                    expected: stimuli[0].shape().to_vec(),
                    actual: t.shape().to_vec(),
                });
            }
        }
        let pyramids = |set: &[Tensor]| -> Result<Vec<Vec<Subband>>> {
            set.par_iter().map(|t| complex_pyramid(t, params)).collect()
        };
        let pr = pyramids(recons)?;
        let ps = pyramids(stimuli)?;
        let scores = (0..n * n)
            .into_par_iter()
            .map(|idx| score_pyramids(&pr[idx / n], &ps[idx % n], params))
            .collect();
        Ok(Self { n, scores })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, recon: usize, stimulus: usize) -> f64 {
        self.scores[recon * self.n + stimulus]
    }

    pub fn matched(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Mean score under `permutations` random derangements of the pairing.
    pub fn chance_baseline(&self, permutations: usize, seed: u64) -> Result<ChanceBaseline> {
        if permutations < 1 {
            return Err(Error::InvalidArgument("need at least one permutation".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidArgument("chance baseline needs at least 2 items".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..self.n).collect();
        let samples: Vec<f64> = (0..permutations)
            .map(|_| {
                loop {
                    perm.shuffle(&mut rng);
                    if perm.iter().enumerate().all(|(i, &p)| i != p) {
                        break;
                    }
                }
                perm.iter().enumerate().map(|(i, &p)| self.get(i, p)).sum::<f64>() / self.n as f64
            })
            .collect();
        let (mean, sd) = mean_sd(&samples);
        Ok(ChanceBaseline { samples, mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChanceBaseline {
    /// Mean mismatched score of each sampled pairing.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

impl ChanceBaseline {
    /// Fraction of sampled pairings scoring strictly below `score`.
    pub fn percentile(&self, score: f64) -> f64 {
        self.samples.iter().filter(|&&s| s < score).count() as f64 / self.samples.len() as f64
    }

    /// Empirical `q`-quantile (nearest rank).
    pub fn quantile(&self, q: f64) -> f64 {
        let mut sorted = self.samples.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((q.clamp(0.0, 1.0) * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        sorted[rank - 1]
    }
}

pub fn chance_baseline(
    recons: &[Tensor],
    stimuli: &[Tensor],
    permutations: usize,
    seed: u64,
    params: &CwssimParams,
) -> Result<ChanceBaseline> {
    PairScores::compute(recons, stimuli, params)?.chance_baseline(permutations, seed)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Matched scores against the chance distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CwssimSummary {
    pub scores: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub chance_mean: f64,
    pub chance_sd: f64,
    /// One-sided t-test of the matched scores exceeding the chance mean.
    pub t: f64,
    pub p: f64,
    /// Fraction of chance pairings whose mean falls below the matched mean.
    pub percentile: f64,
}

impl CwssimSummary {
    pub fn new(pairs: &PairScores, permutations: usize, seed: u64) -> Result<Self> {
        let scores = pairs.matched();
        let chance = pairs.chance_baseline(permutations, seed)?;
        let (mean, sd) = mean_sd(&scores);
        let (t, p) = match one_sample_ttest(&scores, chance.mean) {
            Ok(test) => (test.t, test.p_one_sided),
            // Identical scores: the statistic is infinite unless the mean
            // sits exactly on the reference.
            Err(Error::Undefined(_)) => {
                let diff = mean - chance.mean;
                let t = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
                (t, if diff > 0.0 { 0.0 } else if diff < 0.0 { 1.0 } else { 0.5 })
            }
            Err(e) => return Err(e),
        };
        Ok(Self {
            percentile: chance.percentile(mean),
            scores,
            mean,
            sd,
            chance_mean: chance.mean,
            chance_sd: chance.sd,
            t,
            p,
        })
    }
}

/// `pair_id,cwssim` rows followed by `mean`, `sd`, `chance_mean`,
/// `chance_sd`, `t`, `p` and `percentile` summary rows.
pub fn write_cwssim_report(path: impl AsRef<Path>, summary: &CwssimSummary) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "pair_id,cwssim")?;
    for (i, s) in summary.scores.iter().enumerate() {
        writeln!(out, "{i},{s:?}")?;
    }
    for (key, v) in [
        ("mean", summary.mean),
        ("sd", summary.sd),
        ("chance_mean", summary.chance_mean),
        ("chance_sd", summary.chance_sd),
        ("t", summary.t),
        ("p", summary.p),
        ("percentile", summary.percentile),
    ] {
        writeln!(out, "{key},{v:?}")?;
    }
    out.flush()?;
    Ok(())
}
