//! Per-layer forward and input-gradient kernels on `[C, H, W]` tensors.

use crate::tensor::Tensor;

pub(crate) struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

pub(crate) fn conv_forward(
    input: &Tensor,
    kernels: &Tensor,
    biases: &Tensor,
    geo: &ConvGeometry,
    out_shape: [usize; 3],
) -> Tensor {
    let [c_in, h_in, w_in] = dims3(input.shape());
    let (kh, kw) = (kernels.shape()[2], kernels.shape()[3]);
    let [k_out, h_out, w_out] = out_shape;
    let x = input.data();
    let wt = kernels.data();
    let mut out = vec![0.0; k_out * h_out * w_out];

    for k in 0..k_out {
        let bias = biases.data()[k];
        let plane = &mut out[k * h_out * w_out..(k + 1) * h_out * w_out];
        plane.iter_mut().for_each(|v| *v = bias);
        for c in 0..c_in {
            let kbase = (k * c_in + c) * kh * kw;
            let xbase = c * h_in * w_in;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                        if iy < 0 || iy >= h_in as isize {
                            continue;
                        }
                        let row = xbase + iy as usize * w_in;
                        for kx in 0..kw {
                            let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                            if ix < 0 || ix >= w_in as isize {
                                continue;
                            }
                            acc += wt[kbase + ky * kw + kx] * x[row + ix as usize];
                        }
                    }
                    plane[oy * w_out + ox] += acc;
                }
            }
        }
    }
    Tensor::from_parts(out_shape.to_vec(), out)
}

pub(crate) fn conv_backward(
    grad_out: &Tensor,
    kernels: &Tensor,
    geo: &ConvGeometry,
    in_shape: [usize; 3],
) -> Tensor {
    let [c_in, h_in, w_in] = in_shape;
    let (kh, kw) = (kernels.shape()[2], kernels.shape()[3]);
    let [k_out, h_out, w_out] = dims3(grad_out.shape());
    let g = grad_out.data();
    let wt = kernels.data();
    let mut gin = vec![0.0; c_in * h_in * w_in];

    for k in 0..k_out {
        for c in 0..c_in {
            let kbase = (k * c_in + c) * kh * kw;
            let xbase = c * h_in * w_in;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let go = g[(k * h_out + oy) * w_out + ox];
                    if go == 0.0 {
                        continue;
                    }
                    for ky in 0..kh {
                        let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                        if iy < 0 || iy >= h_in as isize {
                            continue;
                        }
                        let row = xbase + iy as usize * w_in;
                        for kx in 0..kw {
                            let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                            if ix < 0 || ix >= w_in as isize {
                                continue;
                            }
                            gin[row + ix as usize] += wt[kbase + ky * kw + kx] * go;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), gin)
}

pub(crate) fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Subgradient 0 at exactly 0.
pub(crate) fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_parts(input.shape().to_vec(), data)
}

/// Returns the pooled tensor and, for every output cell, the flat input
/// index of its maximum. Ties keep the first (lowest-index) entry.
pub(crate) fn maxpool_forward(
    input: &Tensor,
    window: usize,
    stride: usize,
    out_shape: [usize; 3],
) -> (Tensor, Vec<usize>) {
    let [_, h_in, w_in] = dims3(input.shape());
    let [c_n, h_out, w_out] = out_shape;
    let x = input.data();
    let mut out = Vec::with_capacity(c_n * h_out * w_out);
    let mut argmax = Vec::with_capacity(out.capacity());
    for c in 0..c_n {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut best_idx = usize::MAX;
                let mut best = f64::NEG_INFINITY;
                for dy in 0..window {
                    let row = (c * h_in + oy * stride + dy) * w_in + ox * stride;
                    for dx in 0..window {
                        let v = x[row + dx];
                        if best_idx == usize::MAX || v > best {
                            best = v;
                            best_idx = row + dx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (Tensor::from_parts(out_shape.to_vec(), out), argmax)
}

pub(crate) fn maxpool_backward(grad_out: &Tensor, argmax: &[usize], in_shape: [usize; 3]) -> Tensor {
    let mut gin = vec![0.0; in_shape.iter().product()];
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        gin[idx] += g;
    }
    Tensor::from_parts(in_shape.to_vec(), gin)
}

/// Cross-channel local response normalization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnParams {
    pub size: usize,
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self {
            size: 5,
            k: 2.0,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

impl LrnParams {
    /// Channel range `[lo, hi]` summed for channel `c`.
    pub(crate) fn window(&self, c: usize, channels: usize) -> (usize, usize) {
        let below = (self.size - 1) / 2;
        let above = self.size / 2;
        (c.saturating_sub(below), (c + above).min(channels - 1))
    }
}

/// `y_c = x_c / (k + alpha * sum_{c' in W(c)} x_{c'}^2)^beta`
pub(crate) fn lrn_forward(input: &Tensor, p: &LrnParams) -> Tensor {
    let [ch, h, w] = dims3(input.shape());
    let plane = h * w;
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for c in 0..ch {
        let (lo, hi) = p.window(c, ch);
        for s in 0..plane {
            let sum: f64 = (lo..=hi).map(|j| x[j * plane + s].powi(2)).sum();
            let denom = p.k + p.alpha * sum;
            out[c * plane + s] = x[c * plane + s] * denom.powf(-p.beta);
        }
    }
    Tensor::from_parts(input.shape().to_vec(), out)
}

pub(crate) fn lrn_backward(input: &Tensor, grad_out: &Tensor, p: &LrnParams) -> Tensor {
    let [ch, h, w] = dims3(input.shape());
    let plane = h * w;
    let x = input.data();
    let g = grad_out.data();
    let mut denom = vec![0.0; x.len()];
    for c in 0..ch {
        let (lo, hi) = p.window(c, ch);
        for s in 0..plane {
            let sum: f64 = (lo..=hi).map(|j| x[j * plane + s].powi(2)).sum();
            denom[c * plane + s] = p.k + p.alpha * sum;
        }
    }
    let mut gin = vec![0.0; x.len()];
    for c in 0..ch {
        for s in 0..plane {
            let i = c * plane + s;
            gin[i] += g[i] * denom[i].powf(-p.beta);
        }
        // Channel c's output depends on every x_j in its window.
        let (lo, hi) = p.window(c, ch);
        for s in 0..plane {
            let i = c * plane + s;
            let coef = -2.0 * p.alpha * p.beta * g[i] * x[i] * denom[i].powf(-p.beta - 1.0);
            for j in lo..=hi {
                gin[j * plane + s] += coef * x[j * plane + s];
            }
        }
    }
    Tensor::from_parts(input.shape().to_vec(), gin)
}

/// Dense layer over the flattened input; output is `[outputs, 1, 1]`.
pub(crate) fn fc_forward(input: &Tensor, weights: &Tensor, biases: &Tensor) -> Tensor {
    let (outputs, fan_in) = (weights.shape()[0], weights.shape()[1]);
    let x = input.data();
    let w = weights.data();
    let out = (0..outputs)
        .map(|o| {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            biases.data()[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Tensor::from_parts(vec![outputs, 1, 1], out)
}

pub(crate) fn fc_backward(grad_out: &Tensor, weights: &Tensor, in_shape: [usize; 3]) -> Tensor {
    let fan_in = weights.shape()[1];
    let w = weights.data();
    let mut gin = vec![0.0; fan_in];
    for (o, &g) in grad_out.data().iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &w[o * fan_in..(o + 1) * fan_in];
        for (gi, wi) in gin.iter_mut().zip(row) {
            *gi += g * wi;
        }
    }
    Tensor::from_parts(in_shape.to_vec(), gin)
}

/// Softmax across channels at every spatial position.
pub(crate) fn softmax_forward(input: &Tensor) -> Tensor {
    let [ch, h, w] = dims3(input.shape());
    let plane = h * w;
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for s in 0..plane {
        let max = (0..ch).map(|c| x[c * plane + s]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for c in 0..ch {
            let e = (x[c * plane + s] - max).exp();
            out[c * plane + s] = e;
            total += e;
        }
        for c in 0..ch {
            out[c * plane + s] /= total;
        }
    }
    Tensor::from_parts(input.shape().to_vec(), out)
}

pub(crate) fn softmax_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let [ch, h, w] = dims3(output.shape());
    let plane = h * w;
    let s = output.data();
    let g = grad_out.data();
    let mut gin = vec![0.0; s.len()];
    for p in 0..plane {
        let inner: f64 = (0..ch).map(|c| s[c * plane + p] * g[c * plane + p]).sum();
        for c in 0..ch {
            let i = c * plane + p;
            gin[i] = s[i] * (g[i] - inner);
        }
    }
    Tensor::from_parts(output.shape().to_vec(), gin)
}

fn dims3(shape: &[usize]) -> [usize; 3] {
    [shape[0], shape[1], shape[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lrn_matches_scalar_formula() {
        // 3 channels at a single pixel, n=3: every channel sees all three.
        let x = [0.5, -1.0, 2.0];
        let input = Tensor::new(vec![3, 1, 1], x.to_vec()).unwrap();
        let p = LrnParams {
            size: 3,
            k: 1.0,
            alpha: 1.0,
            beta: 0.5,
        };
        let out = lrn_forward(&input, &p);
        // channel 0 window {0,1}, channel 1 window {0,1,2}, channel 2 window {1,2}
        let expected = [
            0.5 / (1.0f64 + 0.25 + 1.0).sqrt(),
            -1.0 / (1.0f64 + 0.25 + 1.0 + 4.0).sqrt(),
            2.0 / (1.0f64 + 1.0 + 4.0).sqrt(),
        ];
        for (a, b) in out.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn lrn_even_window_is_asymmetric() {
        let p = LrnParams {
            size: 4,
            ..LrnParams::default()
        };
        assert_eq!(p.window(5, 10), (4, 7));
        assert_eq!(p.window(0, 10), (0, 2));
        assert_eq!(p.window(9, 10), (8, 9));
    }

    #[test]
    fn maxpool_ties_pick_lowest_index() {
        let input = Tensor::new(vec![1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let (out, argmax) = maxpool_forward(&input, 2, 2, [1, 1, 1]);
        assert_eq!(out.data(), &[1.0]);
        assert_eq!(argmax, vec![0]);
        let g = maxpool_backward(&Tensor::filled(&[1, 1, 1], 3.0), &argmax, [1, 2, 2]);
        assert_eq!(g.data(), &[3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let input = Tensor::from_fn(&[4, 2, 3], |i| (i as f64 * 0.7).sin() * 3.0);
        let out = softmax_forward(&input);
        for s in 0..6 {
            let total: f64 = (0..4).map(|c| out.data()[c * 6 + s]).sum();
            assert!((total - 1.0).abs() < 1e-14);
        }
    }
}
