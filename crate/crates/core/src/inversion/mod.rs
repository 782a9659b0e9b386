//! Image reconstruction from a target feature vector.
//!
//! Minimizes `E(x) = ‖Φ(x) − Φ0‖² / ‖Φ0‖² + λ_α R_α(x) + λ_tv R_tv(x)` by
//! heavy-ball gradient descent, where `R_α` penalizes large deviations from
//! the image mean and `R_tv` penalizes local differences.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convnet::{FeatureVector, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum InitImage {
    Zeros,
    /// Uniform noise in `[0, 1]` from the configured seed.
    SeededNoise,
    Provided(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig {
    pub alpha: f64,
    pub lambda_alpha: f64,
    pub lambda_tv: f64,
    pub tv_beta: f64,
    /// Step size relative to the target energy: the applied step is
    /// `learning_rate · ‖Φ0‖²`, which undoes the loss normalization.
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_iterations: usize,
    /// Converged once the mean loss of the last `CONVERGENCE_WINDOW`
    /// iterations is less than this fraction below the mean of the window
    /// before.
    pub loss_tol: f64,
    pub init: InitImage,
    pub seed: u64,
}

pub const CONVERGENCE_WINDOW: usize = 50;

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            alpha: 6.0,
            lambda_alpha: 1e-5,
            lambda_tv: 1e-4,
            tv_beta: 2.0,
            learning_rate: 0.05,
            momentum: 0.9,
            max_iterations: 2000,
            loss_tol: 1e-6,
            init: InitImage::SeededNoise,
            seed: 0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("inversion: {m}")));
        if !(self.alpha >= 1.0) {
            return bad("alpha must be >= 1");
        }
        if !(self.tv_beta >= 1.0) {
            return bad("tv_beta must be >= 1");
        }
        if !(self.lambda_alpha >= 0.0) || !(self.lambda_tv >= 0.0) {
            return bad("regularization weights must be >= 0");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.loss_tol >= 0.0) {
            return bad("loss_tol must be >= 0");
        }
        Ok(())
    }
}

/// Objective and its components at one iterate. `alpha` and `tv` are the
/// unweighted regularizer values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub total: f64,
    pub feature: f64,
    pub alpha: f64,
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub image: Tensor,
    /// Loss at the initial image and after every update.
    pub trajectory: Vec<LossRecord>,
    pub iterations_run: usize,
    pub converged: bool,
}

/// Normalized squared feature distance and its input gradient.
pub fn feature_loss(net: &Network, layer_index: usize, x: &Tensor, target: &FeatureVector) -> Result<(f64, Tensor)> {
    let expected = net.feature_dim(layer_index)?;
    if target.dim() != expected {
        return Err(Error::Dimension(format!(
            "target has {} features, layer {layer_index} produces {expected}",
            target.dim()
        )));
    }
    let energy: f64 = target.values.iter().map(|v| v * v).sum();
    let norm = if energy > 0.0 { energy } else { 1.0 };
    net.value_and_input_grad(x, layer_index, |phi| {
        let diff: Vec<f64> = phi.data().iter().zip(&target.values).map(|(a, b)| a - b).collect();
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / norm;
        let upstream = Tensor::from_parts(phi.shape().to_vec(), diff.iter().map(|d| 2.0 * d / norm).collect());
        (loss, upstream)
    })
}

/// `Σ |x_i − mean(x)|^α` and its gradient.
pub fn alpha_norm(x: &Tensor, alpha: f64) -> (f64, Tensor) {
    let n = x.len() as f64;
    // Shifted by the first pixel so a constant image centers to exact zeros.
    let x0 = x.data().first().copied().unwrap_or(0.0);
    let mean = x0 + x.data().iter().map(|v| v - x0).sum::<f64>() / n;
    let mut value = 0.0;
    let mut g: Vec<f64> = Vec::with_capacity(x.len());
    for &v in x.data() {
        let z = v - mean;
        let a = z.abs();
        value += a.powf(alpha);
        g.push(if z == 0.0 { 0.0 } else { alpha * a.powf(alpha - 1.0) * z.signum() });
    }
    // Adjoint of the centering map: subtract the mean of the gradient.
    let g_mean = g.iter().sum::<f64>() / n;
    g.iter_mut().for_each(|v| *v -= g_mean);
    (value, Tensor::from_parts(x.shape().to_vec(), g))
}

/// `Σ (dx² + dy²)^{β/2}` over forward differences, per channel. Differences
/// that would leave the image count as zero.
pub fn tv_norm(x: &Tensor, beta: f64) -> Result<(f64, Tensor)> {
    let [c, h, w] = x.chw()?;
    let d = x.data();
    let mut grad = vec![0.0; d.len()];
    let mut value = 0.0;
    let half = beta / 2.0;
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h {
            for j in 0..w {
                let p = base + i * w + j;
                let dx = if j + 1 < w { d[p + 1] - d[p] } else { 0.0 };
                let dy = if i + 1 < h { d[p + w] - d[p] } else { 0.0 };
                let s = dx * dx + dy * dy;
                if s == 0.0 {
                    continue;
                }
                value += s.powf(half);
                // d/ds s^{β/2}, then ds/dx through both differences.
                let coef = half * s.powf(half - 1.0) * 2.0;
                if j + 1 < w {
                    grad[p + 1] += coef * dx;
                    grad[p] -= coef * dx;
                }
                if i + 1 < h {
                    grad[p + w] += coef * dy;
                    grad[p] -= coef * dy;
                }
            }
        }
    }
    Ok((value, Tensor::from_parts(x.shape().to_vec(), grad)))
}

/// Full objective and gradient at `x`.
pub fn objective(
    net: &Network,
    layer_index: usize,
    x: &Tensor,
    target: &FeatureVector,
    cfg: &InversionConfig,
) -> Result<(LossRecord, Tensor)> {
    let (feature, mut grad) = feature_loss(net, layer_index, x, target)?;
    let (alpha, g_alpha) = alpha_norm(x, cfg.alpha);
    let (tv, g_tv) = tv_norm(x, cfg.tv_beta)?;
    grad.axpy(cfg.lambda_alpha, &g_alpha);
    grad.axpy(cfg.lambda_tv, &g_tv);
    let total = feature + cfg.lambda_alpha * alpha + cfg.lambda_tv * tv;
    Ok((LossRecord { total, feature, alpha, tv }, grad))
}

fn initial_image(net: &Network, cfg: &InversionConfig) -> Result<Tensor> {
    let shape = net.input_shape();
    match &cfg.init {
        InitImage::Zeros => Ok(Tensor::zeros(&shape)),
        InitImage::SeededNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Ok(Tensor::from_fn(&shape, |_| rng.random::<f64>()))
        }
        InitImage::Provided(img) => {
            if img.chw()? != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape.to_vec(),
                    actual: img.shape().to_vec(),
                });
            }
            img.clone().reshape(&shape)
        }
    }
}

/// Heavy-ball descent `v ← μv − η∇E(x)`, `x ← x + v` from the configured
/// initial image.
pub fn invert(net: &Network, layer_index: usize, target: &FeatureVector, cfg: &InversionConfig) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let mut x = initial_image(net, cfg)?;
    let energy: f64 = target.values.iter().map(|v| v * v).sum();
    let step = cfg.learning_rate * if energy > 0.0 { energy } else { 1.0 };
    let mut velocity = Tensor::zeros(x.shape());
    let mut trajectory: Vec<LossRecord> = Vec::with_capacity(cfg.max_iterations + 1);
    let mut last_finite = x.clone();
    let mut converged = false;
    let mut updates = 0;

    loop {
        let (record, grad) = objective(net, layer_index, &x, target, cfg)?;
        if !record.total.is_finite() || !grad.is_finite() {
            return Err(Error::Diverged {
                iteration: updates,
                last_finite: Box::new(last_finite),
            });
        }
        last_finite.clone_from(&x);
        trajectory.push(record);

        let it = trajectory.len() - 1;
        if grad.data().iter().all(|&g| g == 0.0) {
            converged = true;
            break;
        }
        if it + 1 >= 2 * CONVERGENCE_WINDOW {
            // Momentum makes the loss oscillate; compare the mean of the last
            // window with the mean of the one before it.
            let mean = |w: &[LossRecord]| w.iter().map(|r| r.total).sum::<f64>() / w.len() as f64;
            let recent = mean(&trajectory[it + 1 - CONVERGENCE_WINDOW..]);
            let before = mean(&trajectory[it + 1 - 2 * CONVERGENCE_WINDOW..it + 1 - CONVERGENCE_WINDOW]);
            if before == 0.0 || (before - recent) / before.abs() < cfg.loss_tol {
                converged = true;
                break;
            }
        }
        if updates == cfg.max_iterations {
            break;
        }
        velocity = velocity.scale(cfg.momentum);
        velocity.axpy(-step, &grad);
        x.axpy(1.0, &velocity);
        updates += 1;
    }

    Ok(ReconstructionResult {
        image: x,
        trajectory,
        iterations_run: updates,
        converged,
    })
}

/// `iteration,total,feature,alpha,tv` rows.
pub fn write_trajectory_csv(path: impl AsRef<Path>, trajectory: &[LossRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "iteration,total,feature,alpha,tv")?;
    for (i, r) in trajectory.iter().enumerate() {
        writeln!(out, "{i},{:?},{:?},{:?},{:?}", r.total, r.feature, r.alpha, r.tv)?;
    }
    out.flush()?;
    Ok(())
}
