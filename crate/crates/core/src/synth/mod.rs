//! Synthetic stimuli and voxel responses with a planted ground truth.
//!
//! Stimuli are superpositions of oriented Gabor patches over a mid-grey
//! background plus a little 1/f noise, quantized to 8-bit levels so they
//! survive a PGM round trip unchanged. Voxels either encode a few features
//! of a network layer linearly or carry stimulus-independent activity.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::convnet::Network;
use crate::decoder::{Area, AreaMap};
use crate::error::{Error, Result};
use crate::io::{quantize_image, RowMatrix};
use crate::sparse::DesignMatrix;
use crate::tensor::Tensor;

/// Independent generator for item `index` of a seeded collection.
fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaborPatch {
    pub cx: f64,
    pub cy: f64,
    pub theta: f64,
    pub wavelength: f64,
    pub sigma: f64,
    pub phase: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulusRecord {
    pub index: usize,
    pub seed: u64,
    pub patches: Vec<GaborPatch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub images: Vec<Tensor>,
    pub records: Vec<StimulusRecord>,
}

const NOISE_SD: f64 = 0.03;

pub fn generate_corpus(count: usize, height: usize, width: usize, seed: u64) -> Result<Corpus> {
    if count == 0 {
        return Err(Error::InvalidArgument("stimulus count must be >= 1".into()));
    }
    if height < 8 || width < 8 {
        return Err(Error::InvalidArgument(format!(
            "stimuli must be at least 8x8, got {height}x{width}"
        )));
    }
    let (images, records) = (0..count)
        .into_par_iter()
        .map(|i| stimulus(i, height, width, seed))
        .unzip();
    Ok(Corpus { images, records })
}

pub fn generate_stimuli(count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<Tensor>> {
    Ok(generate_corpus(count, height, width, seed)?.images)
}

fn stimulus(index: usize, h: usize, w: usize, seed: u64) -> (Tensor, StimulusRecord) {
    let mut rng = stream_rng(seed, index as u64);
    let size = h.min(w) as f64;
    let count = rng.random_range(3..=8);
    let patches: Vec<GaborPatch> = (0..count)
        .map(|_| GaborPatch {
            cx: rng.random_range(0.0..w as f64),
            cy: rng.random_range(0.0..h as f64),
            theta: rng.random_range(0.0..std::f64::consts::PI),
            wavelength: rng.random_range(4.0..(size / 2.0).max(5.0)),
            sigma: rng.random_range(size / 16.0..size / 5.0),
            phase: rng.random_range(0.0..2.0 * std::f64::consts::PI),
            amplitude: rng.random_range(0.1..0.35) * if rng.random::<bool>() { 1.0 } else { -1.0 },
        })
        .collect();
    let noise = pink_noise(h, w, &mut rng);
    let mut data = vec![0.5; h * w];
    for (p, v) in data.iter_mut().enumerate() {
        let (y, x) = ((p / w) as f64, (p % w) as f64);
        for g in &patches {
            let (dx, dy) = (x - g.cx, y - g.cy);
            let along = dx * g.theta.cos() + dy * g.theta.sin();
            let envelope = (-(dx * dx + dy * dy) / (2.0 * g.sigma * g.sigma)).exp();
            *v += g.amplitude * envelope * (2.0 * std::f64::consts::PI * along / g.wavelength + g.phase).cos();
        }
        *v = (*v + noise[p]).clamp(0.0, 1.0);
    }
    let image = quantize_image(&Tensor::from_parts(vec![1, h, w], data));
    (image, StimulusRecord { index, seed, patches })
}

/// White Gaussian noise shaped to a 1/f amplitude spectrum, scaled to
/// standard deviation `NOISE_SD`.
fn pink_noise(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..h * w)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    fft2(&mut buf, h, w, &mut planner, false);
    for (p, c) in buf.iter_mut().enumerate() {
        let fy = signed_frequency(p / w, h);
        let fx = signed_frequency(p % w, w);
        let f = (fx * fx + fy * fy).sqrt();
        *c = if f == 0.0 { Complex64::new(0.0, 0.0) } else { *c / f };
    }
    fft2(&mut buf, h, w, &mut planner, true);
    let values: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    let scale = if sd > 0.0 { NOISE_SD / sd } else { 0.0 };
    values.iter().map(|v| (v - mean) * scale).collect()
}

fn signed_frequency(k: usize, n: usize) -> f64 {
    let k = k as f64;
    let n = n as f64;
    if k <= n / 2.0 {
        k / n
    } else {
        (k - n) / n
    }
}

/// Unnormalized 2-D transform: rows, then columns.
fn fft2(buf: &mut [Complex64], h: usize, w: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let row = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    row.process(buf);
    let col = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}

/// `index,seed,patch_count,patches` with patches as
/// `cx:cy:theta:wavelength:sigma:phase:amplitude` joined by `;`.
pub fn write_manifest(path: impl AsRef<Path>, records: &[StimulusRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "index,seed,patch_count,patches")?;
    for r in records {
        let patches: Vec<String> = r
            .patches
            .iter()
            .map(|g| {
                format!(
                    "{:?}:{:?}:{:?}:{:?}:{:?}:{:?}:{:?}",
                    g.cx, g.cy, g.theta, g.wavelength, g.sigma, g.phase, g.amplitude
                )
            })
            .collect();
        writeln!(out, "{},{},{},{}", r.index, r.seed, r.patches.len(), patches.join(";"))?;
    }
    out.flush()?;
    Ok(())
}

/// Features of every stimulus at `layer_index`, one row per stimulus.
pub fn feature_matrix(net: &Network, stimuli: &[Tensor], layer_index: usize) -> Result<RowMatrix> {
    let rows = stimuli
        .par_iter()
        .map(|s| net.extract_features(s, layer_index).map(|f| f.values))
        .collect::<Result<Vec<_>>>()?;
    RowMatrix::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthConfig {
    pub n_voxels: usize,
    /// Voxels that encode features; the rest carry stimulus-independent
    /// activity.
    pub n_informative: usize,
    pub support_size: usize,
    /// Noise standard deviation as a fraction of each voxel's noiseless
    /// response standard deviation.
    pub noise_rel: f64,
    /// Drives supports, coefficients and informative-voxel placement.
    pub encoding_seed: u64,
    /// Drives measurement noise only.
    pub noise_seed: u64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            n_voxels: 400,
            n_informative: 200,
            support_size: 3,
            noise_rel: 0.1,
            encoding_seed: 0,
            noise_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelTruth {
    /// Encoded layer, `None` for an uninformative voxel.
    pub layer: Option<usize>,
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub area: Area,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTruth {
    pub voxels: Vec<VoxelTruth>,
    pub noise_rel: f64,
    pub encoding_seed: u64,
    pub noise_seed: u64,
}

impl SimulationTruth {
    pub fn informative(&self) -> Vec<usize> {
        (0..self.voxels.len()).filter(|&v| self.voxels[v].layer.is_some()).collect()
    }

    pub fn area_map(&self) -> AreaMap {
        AreaMap {
            labels: self.voxels.iter().map(|v| v.area).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub design: DesignMatrix,
    /// Noiseless responses, `m × n`.
    pub clean: RowMatrix,
    pub truth: SimulationTruth,
}

/// Responses of voxels that encode `layer_index`, placed at seeded random
/// positions among `cfg.n_voxels`. All voxels are labeled `other`.
pub fn simulate_voxels(stimuli: &[Tensor], net: &Network, layer_index: usize, cfg: &TruthConfig) -> Result<Simulation> {
    if cfg.n_informative > cfg.n_voxels {
        return Err(Error::InvalidArgument("more informative voxels than voxels".into()));
    }
    let mut rng = stream_rng(cfg.encoding_seed, u64::MAX);
    let mut plan: Vec<Option<usize>> = vec![None; cfg.n_voxels];
    for v in sample(&mut rng, cfg.n_voxels, cfg.n_informative) {
        plan[v] = Some(layer_index);
    }
    let areas = AreaMap {
        labels: vec![Area::Other; cfg.n_voxels],
    };
    simulate_planned(stimuli, net, &plan, &areas, cfg)
}

/// Encodings for an explicit plan: voxel `v` encodes `cfg.support_size`
/// random features of layer `plan[v]` with standard-normal coefficients, or
/// nothing. `cfg.n_voxels` and `cfg.n_informative` are taken from the plan.
pub fn simulate_planned(
    stimuli: &[Tensor],
    net: &Network,
    plan: &[Option<usize>],
    areas: &AreaMap,
    cfg: &TruthConfig,
) -> Result<Simulation> {
    if areas.len() != plan.len() {
        return Err(Error::Dimension(format!(
            "area map covers {} voxels, plan has {}",
            areas.len(),
            plan.len()
        )));
    }
    let encodings = plan
        .iter()
        .enumerate()
        .map(|(v, &layer)| {
            let Some(l) = layer else {
                return Ok(VoxelEncoding {
                    layer: None,
                    support: Vec::new(),
                    coefficients: Vec::new(),
                    area: areas.labels[v],
                });
            };
            let d = net.feature_dim(l)?;
            if cfg.support_size == 0 || cfg.support_size > d {
                return Err(Error::InvalidArgument(format!(
                    "support size {} is outside 1..={d} for layer {l}",
                    cfg.support_size
                )));
            }
            let mut enc = stream_rng(cfg.encoding_seed, v as u64);
            let mut support = sample(&mut enc, d, cfg.support_size).into_vec();
            support.sort_unstable();
            let coefficients = support.iter().map(|_| StandardNormal.sample(&mut enc)).collect();
            Ok(VoxelEncoding {
                layer,
                support,
                coefficients,
                area: areas.labels[v],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    simulate_encoded(stimuli, net, &encodings, cfg)
}

/// How one voxel responds: `Σ coefficients[k] · Φ_layer[support[k]]`, or
/// stimulus-independent activity when `layer` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelEncoding {
    pub layer: Option<usize>,
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub area: Area,
}

/// Responses for explicit encodings. Uninformative voxels draw their
/// activity from `cfg.encoding_seed`; measurement noise comes from
/// `cfg.noise_seed` with per-voxel standard deviation
/// `cfg.noise_rel · sd(noiseless response)`.
pub fn simulate_encoded(
    stimuli: &[Tensor],
    net: &Network,
    encodings: &[VoxelEncoding],
    cfg: &TruthConfig,
) -> Result<Simulation> {
    if stimuli.is_empty() || encodings.is_empty() {
        return Err(Error::InvalidArgument("need stimuli and voxels to simulate".into()));
    }
    if !(cfg.noise_rel >= 0.0) || !cfg.noise_rel.is_finite() {
        return Err(Error::InvalidArgument("noise level must be >= 0".into()));
    }
    let mut layers: Vec<usize> = encodings.iter().filter_map(|e| e.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    let features: Vec<(usize, RowMatrix)> = layers
        .iter()
        .map(|&l| feature_matrix(net, stimuli, l).map(|f| (l, f)))
        .collect::<Result<_>>()?;
    for (v, e) in encodings.iter().enumerate() {
        if let Some(l) = e.layer {
            let d = features.iter().find(|(k, _)| *k == l).expect("layer computed").1.cols;
            if e.support.len() != e.coefficients.len() || e.support.iter().any(|&j| j >= d) {
                return Err(Error::InvalidArgument(format!(
                    "voxel {v}: support must index features of layer {l} (D = {d}) with one coefficient each"
                )));
            }
        }
    }
    let m = stimuli.len();

    let voxels: Vec<(VoxelTruth, Vec<f64>, Vec<f64>)> = encodings
        .par_iter()
        .enumerate()
        .map(|(v, e)| {
            let clean: Vec<f64> = match e.layer {
                Some(l) => {
                    let f = &features.iter().find(|(k, _)| *k == l).expect("layer computed").1;
                    (0..m)
                        .map(|i| e.support.iter().zip(&e.coefficients).map(|(&j, c)| c * f.get(i, j)).sum())
                        .collect()
                }
                None => {
                    let mut enc = stream_rng(cfg.encoding_seed, v as u64);
                    (0..m).map(|_| StandardNormal.sample(&mut enc)).collect()
                }
            };
            let mean = clean.iter().sum::<f64>() / m as f64;
            let sd = (clean.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / m as f64).sqrt();
            let sigma = cfg.noise_rel * sd;
            let mut noise_rng = stream_rng(cfg.noise_seed, v as u64);
            let noisy: Vec<f64> = clean
                .iter()
                .map(|&r| {
                    let z: f64 = StandardNormal.sample(&mut noise_rng);
                    if sigma > 0.0 {
                        r + sigma * z
                    } else {
                        r
                    }
                })
                .collect();
            let truth = VoxelTruth {
                layer: e.layer,
                support: e.support.clone(),
                coefficients: e.coefficients.clone(),
                area: e.area,
                sigma,
            };
            (truth, clean, noisy)
        })
        .collect();

    let n = encodings.len();
    let mut clean = vec![0.0; m * n];
    let mut noisy = vec![0.0; m * n];
    let mut truths = Vec::with_capacity(n);
    for (v, (truth, c, y)) in voxels.into_iter().enumerate() {
        for i in 0..m {
            clean[i * n + v] = c[i];
            noisy[i * n + v] = y[i];
        }
        truths.push(truth);
    }
    let design = DesignMatrix::from_responses(&RowMatrix::new(m, n, noisy)?)?;
    Ok(Simulation {
        design,
        clean: RowMatrix::new(m, n, clean)?,
        truth: SimulationTruth {
            voxels: truths,
            noise_rel: cfg.noise_rel,
            encoding_seed: cfg.encoding_seed,
            noise_seed: cfg.noise_seed,
        },
    })
}

/// `voxel,area,layer,support,coefficients,sigma`; list fields are
/// space-separated and `layer` is empty for uninformative voxels.
pub fn write_truth_csv(path: impl AsRef<Path>, truth: &SimulationTruth) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "voxel,area,layer,support,coefficients,sigma")?;
    for (v, t) in truth.voxels.iter().enumerate() {
        let mut support = String::new();
        for (k, s) in t.support.iter().enumerate() {
            let _ = write!(support, "{}{s}", if k > 0 { " " } else { "" });
        }
        let coefs: Vec<String> = t.coefficients.iter().map(|c| format!("{c:?}")).collect();
        let layer = t.layer.map(|l| l.to_string()).unwrap_or_default();
        writeln!(out, "{v},{},{layer},{support},{},{:?}", t.area, coefs.join(" "), t.sigma)?;
    }
    out.flush()?;
    Ok(())
}

/// Largest-remainder apportionment of `n` items to `weights` (summing to
/// 1); leftover units go to the largest fractional parts, earlier entries
/// first on ties.
pub fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Area labels in the given proportions, randomly placed, and for each
/// voxel an encoding level in `0..levels`.
///
/// A voxel in the `a`-th early-to-late area (V1 = 0 … V4 = 3; `other`
/// counts as the middle) picks level `t` with probability proportional to
/// `exp(−gradient · (t/(levels−1) − a/3)²)`, so larger gradients tie early
/// areas more tightly to early levels.
pub fn make_area_map(
    n_voxels: usize,
    proportions: &[(Area, f64)],
    gradient: f64,
    levels: usize,
    seed: u64,
) -> Result<(AreaMap, Vec<usize>)> {
    let total: f64 = proportions.iter().map(|p| p.1).sum();
    if proportions.is_empty() || proportions.iter().any(|p| !(p.1 >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("area proportions must be nonnegative and sum to 1".into()));
    }
    if levels == 0 || !(gradient >= 0.0) {
        return Err(Error::InvalidArgument("need at least one level and a nonnegative gradient".into()));
    }
    let weights: Vec<f64> = proportions.iter().map(|p| p.1).collect();
    let counts = apportion(n_voxels, &weights);
    let mut labels: Vec<Area> = proportions
        .iter()
        .zip(&counts)
        .flat_map(|(&(a, _), &c)| std::iter::repeat_n(a, c))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    labels.shuffle(&mut rng);

    let rank = |a: Area| match a {
        Area::V1 => 0.0,
        Area::V2 => 1.0 / 3.0,
        Area::V3 => 2.0 / 3.0,
        Area::V4 => 1.0,
        Area::Other => 0.5,
    };
    let assignment = labels
        .iter()
        .map(|&a| {
            let weights: Vec<f64> = (0..levels)
                .map(|t| {
                    let pos = if levels == 1 { 0.0 } else { t as f64 / (levels - 1) as f64 };
                    (-gradient * (pos - rank(a)).powi(2)).exp()
                })
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut level = levels - 1;
            for (t, w) in weights.iter().enumerate() {
                if u < *w {
                    level = t;
                    break;
                }
                u -= w;
            }
            level
        })
        .collect();
    Ok((AreaMap { labels }, assignment))
}
