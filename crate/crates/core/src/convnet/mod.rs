//! Layered convolutional network: forward evaluation and input gradients.
//!
//! Activations are `[channels, height, width]` tensors. Convolution is
//! cross-correlation (no kernel flip); fully connected layers produce
//! `[outputs, 1, 1]`. Feature vectors flatten activations channel-major,
//! then row, then column, which is simply the tensor's row-major order.

mod layers;
pub mod spec_file;
pub mod weights;

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use layers::LrnParams;
use layers::ConvGeometry;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One layer of the network vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Convolution {
        kernels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    Rectifier,
    MaxPool {
        window: usize,
        stride: usize,
    },
    CrossChannelNorm(LrnParams),
    FullyConnected {
        outputs: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn conv(kernels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Convolution {
            kernels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        }
    }

    pub fn maxpool(window: usize, stride: usize) -> Self {
        LayerSpec::MaxPool { window, stride }
    }

    pub fn norm() -> Self {
        LayerSpec::CrossChannelNorm(LrnParams::default())
    }

    pub fn fc(outputs: usize) -> Self {
        LayerSpec::FullyConnected { outputs }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(
            self,
            LayerSpec::Convolution { .. } | LayerSpec::FullyConnected { .. }
        )
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Convolution { .. } => "conv",
            LayerSpec::Rectifier => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::CrossChannelNorm(_) => "norm",
            LayerSpec::FullyConnected { .. } => "fc",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Output shape for a given input shape, or a reason the layer cannot
    /// accept it.
    pub fn output_shape(&self, input: [usize; 3]) -> std::result::Result<[usize; 3], String> {
        let [c, h, w] = input;
        match *self {
            LayerSpec::Convolution {
                kernels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                if kernels == 0 || kernel_h == 0 || kernel_w == 0 {
                    return Err("kernel count and extents must be >= 1".into());
                }
                if stride == 0 {
                    return Err("stride must be >= 1".into());
                }
                let (ph, pw) = (h + 2 * padding, w + 2 * padding);
                if ph < kernel_h || pw < kernel_w {
                    return Err(format!(
                        "kernel {kernel_h}x{kernel_w} larger than padded input {ph}x{pw}"
                    ));
                }
                Ok([kernels, (ph - kernel_h) / stride + 1, (pw - kernel_w) / stride + 1])
            }
            LayerSpec::MaxPool { window, stride } => {
                if window == 0 || stride == 0 {
                    return Err("window and stride must be >= 1".into());
                }
                if h < window || w < window {
                    return Err(format!("pool window {window} larger than input {h}x{w}"));
                }
                Ok([c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            LayerSpec::CrossChannelNorm(p) => {
                if p.size == 0 {
                    return Err("normalization window must be >= 1".into());
                }
                if !(p.k.is_finite() && p.alpha.is_finite() && p.beta.is_finite()) || p.k <= 0.0 {
                    return Err("normalization constants must be finite with k > 0".into());
                }
                Ok(input)
            }
            LayerSpec::FullyConnected { outputs } => {
                if outputs == 0 {
                    return Err("output count must be >= 1".into());
                }
                Ok([outputs, 1, 1])
            }
            LayerSpec::Rectifier | LayerSpec::Softmax => Ok(input),
        }
    }

    /// Shapes of (kernels, biases) for a parametric layer.
    pub fn param_shapes(&self, input: [usize; 3]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Convolution {
                kernels,
                kernel_h,
                kernel_w,
                ..
            } => Some((vec![kernels, input[0], kernel_h, kernel_w], vec![kernels])),
            LayerSpec::FullyConnected { outputs } => {
                Some((vec![outputs, input.iter().product()], vec![outputs]))
            }
            _ => None,
        }
    }
}

/// Kernel and bias tensors of a parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kernels: Tensor,
    pub biases: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input_shape: [usize; 3],
    pub output_shape: [usize; 3],
    pub params: Option<LayerParams>,
}

#[derive(Debug, Clone)]
pub enum WeightInit {
    Zeros,
    /// He-normal kernels and zero biases drawn from a seeded stream.
    SeededRandom(u64),
    FromFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: [usize; 3],
    layers: Vec<Layer>,
}

/// Flattened activations of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub layer_index: usize,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Validates the shape chain without allocating weights. Returns the output
/// shape of every layer.
pub fn plan_shapes(input_shape: [usize; 3], specs: &[LayerSpec]) -> Result<Vec<[usize; 3]>> {
    if input_shape.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "input shape {input_shape:?} has a zero extent"
        )));
    }
    let mut shapes = Vec::with_capacity(specs.len());
    let mut current = input_shape;
    for (index, spec) in specs.iter().enumerate() {
        current = spec
            .output_shape(current)
            .map_err(|reason| Error::LayerBuild { index, reason })?;
        shapes.push(current);
    }
    Ok(shapes)
}

pub fn build_network(
    input_shape: [usize; 3],
    specs: &[LayerSpec],
    init: &WeightInit,
) -> Result<Network> {
    let outputs = plan_shapes(input_shape, specs)?;
    let mut rng = match init {
        WeightInit::SeededRandom(seed) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    let mut layers = Vec::with_capacity(specs.len());
    let mut current = input_shape;
    for (spec, &output_shape) in specs.iter().zip(&outputs) {
        let params = spec.param_shapes(current).map(|(kshape, bshape)| {
            let kernels = match rng.as_mut() {
                Some(rng) => {
                    let fan_in: usize = kshape[1..].iter().product();
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                        .expect("positive std");
                    Tensor::from_fn(&kshape, |_| normal.sample(rng))
                }
                None => Tensor::zeros(&kshape),
            };
            LayerParams {
                kernels,
                biases: Tensor::zeros(&bshape),
            }
        });
        layers.push(Layer {
            spec: spec.clone(),
            input_shape: current,
            output_shape,
            params,
        });
        current = output_shape;
    }
    let mut net = Network {
        input_shape,
        layers,
    };
    if let WeightInit::FromFile(path) = init {
        let loaded = weights::load_weights(path)?;
        net.set_weights(loaded)?;
    }
    Ok(net)
}

impl Network {
    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// Output shape of a layer; index 0 of a network without layers is the
    /// input itself.
    pub fn output_shape(&self, layer_index: usize) -> Result<[usize; 3]> {
        if self.layers.is_empty() && layer_index == 0 {
            return Ok(self.input_shape);
        }
        self.layer(layer_index).map(|l| l.output_shape)
    }

    /// Feature dimension of a layer.
    pub fn feature_dim(&self, layer_index: usize) -> Result<usize> {
        Ok(self.output_shape(layer_index)?.iter().product())
    }

    fn layer(&self, index: usize) -> Result<&Layer> {
        self.layers.get(index).ok_or(Error::LayerIndex {
            index,
            count: self.layers.len(),
        })
    }

    /// Replaces parameters of parametric layers. Every parametric layer must
    /// be present exactly once with matching shapes.
    pub fn set_weights(&mut self, params: Vec<(usize, LayerParams)>) -> Result<()> {
        let mut seen = vec![false; self.layers.len()];
        for (index, p) in &params {
            let layer = self.layers.get(*index).ok_or(Error::LayerBuild {
                index: *index,
                reason: "weights given for a layer that does not exist".into(),
            })?;
            let (kshape, bshape) =
                layer
                    .spec
                    .param_shapes(layer.input_shape)
                    .ok_or_else(|| Error::LayerBuild {
                        index: *index,
                        reason: format!("{} layer takes no weights", layer.spec.kind_name()),
                    })?;
            if p.kernels.shape() != kshape.as_slice() || p.biases.shape() != bshape.as_slice() {
                return Err(Error::LayerBuild {
                    index: *index,
                    reason: format!(
                        "weight shapes {:?}/{:?} do not match expected {:?}/{:?}",
                        p.kernels.shape(),
                        p.biases.shape(),
                        kshape,
                        bshape
                    ),
                });
            }
            if std::mem::replace(&mut seen[*index], true) {
                return Err(Error::LayerBuild {
                    index: *index,
                    reason: "weights given twice".into(),
                });
            }
        }
        if let Some(index) = (0..self.layers.len())
            .find(|&i| self.layers[i].spec.is_parametric() && !seen[i])
        {
            return Err(Error::LayerBuild {
                index,
                reason: "missing weights".into(),
            });
        }
        for (index, p) in params {
            self.layers[index].params = Some(p);
        }
        Ok(())
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.input_shape {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape.to_vec(),
                actual: image.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Activations of every layer, `activations[i]` being layer `i`'s output.
    pub fn forward(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        self.forward_upto(image, self.layers.len())
    }

    /// Activations of the first `count` layers.
    pub fn forward_upto(&self, image: &Tensor, count: usize) -> Result<Vec<Tensor>> {
        self.check_input(image)?;
        let mut acts: Vec<Tensor> = Vec::with_capacity(count);
        for layer in &self.layers[..count.min(self.layers.len())] {
            let input = acts.last().unwrap_or(image);
            acts.push(layer_forward(layer, input));
        }
        Ok(acts)
    }

    /// Output of a single layer.
    pub fn forward_to(&self, image: &Tensor, layer_index: usize) -> Result<Tensor> {
        self.layer(layer_index)?;
        let mut acts = self.forward_upto(image, layer_index + 1)?;
        Ok(acts.pop().expect("at least one layer"))
    }

    /// Flattened activations of `layer_index`. On a network without layers
    /// the image itself is the representation and index 0 refers to it.
    pub fn extract_features(&self, image: &Tensor, layer_index: usize) -> Result<FeatureVector> {
        if self.layers.is_empty() && layer_index == 0 {
            self.check_input(image)?;
            return Ok(FeatureVector {
                layer_index,
                values: image.data().to_vec(),
            });
        }
        let out = self.forward_to(image, layer_index)?;
        Ok(FeatureVector {
            layer_index,
            values: out.into_data(),
        })
    }

    /// Gradient of `<grad_at_layer, Phi_layer(x)>` with respect to `x`,
    /// evaluated at `image`.
    pub fn backward_to_input(
        &self,
        layer_index: usize,
        grad_at_layer: &Tensor,
        image: &Tensor,
    ) -> Result<Tensor> {
        if self.layers.is_empty() && layer_index == 0 {
            self.check_input(image)?;
            if grad_at_layer.shape() != self.input_shape {
                return Err(Error::ShapeMismatch {
                    expected: self.input_shape.to_vec(),
                    actual: grad_at_layer.shape().to_vec(),
                });
            }
            return Ok(grad_at_layer.clone());
        }
        let out_shape = self.output_shape(layer_index)?;
        if grad_at_layer.shape() != out_shape {
            return Err(Error::ShapeMismatch {
                expected: out_shape.to_vec(),
                actual: grad_at_layer.shape().to_vec(),
            });
        }
        let acts = self.forward_upto(image, layer_index + 1)?;
        Ok(self.backprop(image, &acts, grad_at_layer.clone()))
    }

    /// Forward to `layer_index` and back with a caller-computed upstream
    /// gradient. Returns the layer output and the input gradient produced
    /// by `upstream(output)`.
    pub fn value_and_input_grad<T>(
        &self,
        image: &Tensor,
        layer_index: usize,
        upstream: impl FnOnce(&Tensor) -> (T, Tensor),
    ) -> Result<(T, Tensor)> {
        if self.layers.is_empty() && layer_index == 0 {
            self.check_input(image)?;
            return Ok(upstream(image));
        }
        self.layer(layer_index)?;
        let acts = self.forward_upto(image, layer_index + 1)?;
        let (value, grad) = upstream(acts.last().expect("nonempty"));
        Ok((value, self.backprop(image, &acts, grad)))
    }

    fn backprop(&self, image: &Tensor, acts: &[Tensor], mut grad: Tensor) -> Tensor {
        for i in (0..acts.len()).rev() {
            let layer = &self.layers[i];
            let input = if i == 0 { image } else { &acts[i - 1] };
            grad = layer_backward(layer, input, &acts[i], &grad);
        }
        grad
    }
}

fn layer_forward(layer: &Layer, input: &Tensor) -> Tensor {
    match &layer.spec {
        LayerSpec::Convolution {
            stride, padding, ..
        } => {
            let p = layer.params.as_ref().expect("parametric layer has weights");
            layers::conv_forward(
                input,
                &p.kernels,
                &p.biases,
                &ConvGeometry {
                    stride: *stride,
                    padding: *padding,
                },
                layer.output_shape,
            )
        }
        LayerSpec::Rectifier => layers::relu_forward(input),
        LayerSpec::MaxPool { window, stride } => {
            layers::maxpool_forward(input, *window, *stride, layer.output_shape).0
        }
        LayerSpec::CrossChannelNorm(p) => layers::lrn_forward(input, p),
        LayerSpec::FullyConnected { .. } => {
            let p = layer.params.as_ref().expect("parametric layer has weights");
            layers::fc_forward(input, &p.kernels, &p.biases)
        }
        LayerSpec::Softmax => layers::softmax_forward(input),
    }
}

fn layer_backward(layer: &Layer, input: &Tensor, output: &Tensor, grad: &Tensor) -> Tensor {
    match &layer.spec {
        LayerSpec::Convolution {
            stride, padding, ..
        } => {
            let p = layer.params.as_ref().expect("parametric layer has weights");
            layers::conv_backward(
                grad,
                &p.kernels,
                &ConvGeometry {
                    stride: *stride,
                    padding: *padding,
                },
                layer.input_shape,
            )
        }
        LayerSpec::Rectifier => layers::relu_backward(input, grad),
        LayerSpec::MaxPool { window, stride } => {
            let (_, argmax) =
                layers::maxpool_forward(input, *window, *stride, layer.output_shape);
            layers::maxpool_backward(grad, &argmax, layer.input_shape)
        }
        LayerSpec::CrossChannelNorm(p) => layers::lrn_backward(input, grad, p),
        LayerSpec::FullyConnected { .. } => {
            let p = layer.params.as_ref().expect("parametric layer has weights");
            layers::fc_backward(grad, &p.kernels, layer.input_shape)
        }
        LayerSpec::Softmax => layers::softmax_backward(output, grad),
    }
}

/// The 20-layer reference geometry: five convolutional stages and three
/// fully connected layers on a 3x227x227 input (conv1 11x11/4, 3x3/2 pools,
/// conv2 5x5 pad 2, conv3-5 3x3 pad 1).
pub fn reference_alexnet() -> ([usize; 3], Vec<LayerSpec>) {
    use LayerSpec::*;
    let specs = vec![
        LayerSpec::conv(96, 11, 4, 0),
        Rectifier,
        LayerSpec::maxpool(3, 2),
        LayerSpec::norm(),
        LayerSpec::conv(256, 5, 1, 2),
        Rectifier,
        LayerSpec::maxpool(3, 2),
        LayerSpec::norm(),
        LayerSpec::conv(384, 3, 1, 1),
        Rectifier,
        LayerSpec::conv(384, 3, 1, 1),
        Rectifier,
        LayerSpec::conv(256, 3, 1, 1),
        Rectifier,
        LayerSpec::maxpool(3, 2),
        LayerSpec::fc(4096),
        Rectifier,
        LayerSpec::fc(4096),
        Rectifier,
        LayerSpec::fc(1000),
    ];
    ([3, 227, 227], specs)
}
