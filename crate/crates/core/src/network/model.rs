use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{validate_geometry, ArchitectureSpec, Geometry, LayerSpec};
use crate::error::{Error, Result};
use crate::templates::TemplateSet;
use crate::tensor::{
    conv2d_backward_cols, conv2d_forward, conv2d_forward_cols, maxpool_backward, maxpool_forward, relu, relu_backward,
    shape_err, ConvCols, Elem, Tensor,
};

/// Kernels `(out, in, k, k)` and biases `(out, 1, 1, 1)` of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Elem> ConvParams<T> {
    fn zeros_like(&self) -> Self {
        ConvParams {
            kernels: Tensor::zeros(self.kernels.dims()),
            bias: Tensor::zeros(self.bias.dims()),
        }
    }

    fn cast<U: Elem>(&self) -> ConvParams<U> {
        ConvParams {
            kernels: self.kernels.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Parameter initialisation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Init {
    /// Zero-mean Gaussian kernels with a fixed standard deviation.
    Gaussian {
        std: f64,
    },
    /// Zero-mean Gaussian with `std = sqrt(2 / fan_in)`.
    #[default]
    He,
    Zeros,
}

impl Init {
    pub fn describe(&self) -> String {
        match self {
            Init::Gaussian { std } => format!("gaussian:{std}"),
            Init::He => "he".into(),
            Init::Zeros => "zeros".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "he" => Ok(Init::He),
            "zeros" => Ok(Init::Zeros),
            _ => {
                let std = s
                    .strip_prefix("gaussian:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| *v >= 0.0)
                    .ok_or_else(|| Error::Config(format!("unknown init '{s}'")))?;
                Ok(Init::Gaussian { std })
            }
        }
    }
}

/// Split of the `5K` head: `K` class logits, then `K` blocks of four
/// regression values `(t_x, t_y, t_w, t_h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput<T = f32> {
    pub scores: Tensor<T>,
    pub regress: Tensor<T>,
}

impl<T: Elem> HeadOutput<T> {
    pub fn split(raw: &Tensor<T>, classes: usize) -> Result<Self> {
        if raw.channels() != 5 * classes {
            return Err(shape_err("head output channels", &[5 * classes], &[raw.channels()]));
        }
        Ok(HeadOutput {
            scores: raw.channel_slice(0, classes)?,
            regress: raw.channel_slice(classes, 5 * classes)?,
        })
    }

    pub fn classes(&self) -> usize {
        self.scores.channels()
    }

    /// Response map extent `(h, w)`.
    pub fn map_size(&self) -> (usize, usize) {
        (self.scores.height(), self.scores.width())
    }

    pub fn logits_at(&self, n: usize, y: usize, x: usize) -> Vec<T> {
        (0..self.classes()).map(|k| self.scores.get(n, k, y, x)).collect()
    }

    pub fn deltas_at(&self, n: usize, class: usize, y: usize, x: usize) -> [T; 4] {
        std::array::from_fn(|i| self.regress.get(n, 4 * class + i, y, x))
    }
}

enum LayerCache<T> {
    Conv {
        cols: ConvCols<T>,
        /// Pre-activation output, kept when a ReLU follows.
        pre_relu: Option<Tensor<T>>,
    },
    Pool {
        input_dims: [usize; 4],
        argmax: Vec<usize>,
    },
}

/// Intermediate values of a forward pass, consumed by [`Model::backward`].
pub struct ForwardTrace<T> {
    caches: Vec<LayerCache<T>>,
    pub output: Tensor<T>,
}

/// A proposal network: architecture, parameters and the template set it was
/// trained for.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    spec: ArchitectureSpec,
    geometry: Geometry,
    templates: TemplateSet,
    /// One entry per convolution, in layer order.
    pub params: Vec<ConvParams<T>>,
    /// Free-form provenance (initialisation, training settings).
    pub metadata: BTreeMap<String, String>,
}

impl<T: Elem> Model<T> {
    pub fn new(spec: ArchitectureSpec, templates: TemplateSet, init: Init, seed: u64) -> Result<Self> {
        if templates.classes() != spec.classes {
            return Err(Error::Config(format!(
                "template set has {} classes but the architecture has K = {}",
                templates.classes(),
                spec.classes
            )));
        }
        let geometry = validate_geometry(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut channels = spec.input_channels;
        for layer in &spec.layers {
            if let LayerSpec::Conv {
                out_channels, kernel, ..
            } = *layer
            {
                let dims = [out_channels, channels, kernel, kernel];
                let fan_in = channels * kernel * kernel;
                let std = match init {
                    Init::Gaussian { std } => std,
                    Init::He => (2.0 / fan_in as f64).sqrt(),
                    Init::Zeros => 0.0,
                };
                let len = dims.iter().product();
                let data = if std > 0.0 {
                    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                    (0..len).map(|_| T::from_f64(normal.sample(&mut rng))).collect()
                } else {
                    vec![T::zero(); len]
                };
                params.push(ConvParams {
                    kernels: Tensor::from_vec(dims, data)?,
                    bias: Tensor::zeros([out_channels, 1, 1, 1]),
                });
                channels = out_channels;
            }
        }
        let mut metadata = BTreeMap::new();
        metadata.insert("init".to_string(), init.describe());
        metadata.insert("init_seed".to_string(), seed.to_string());
        Ok(Model {
            spec,
            geometry,
            templates,
            params,
            metadata,
        })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_parts(
        spec: ArchitectureSpec,
        templates: TemplateSet,
        params: Vec<ConvParams<T>>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut model = Model::new(spec, templates, Init::Zeros, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Format(format!(
                "expected {} parameter layers, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (expected, got) in model.params.iter().zip(&params) {
            if expected.kernels.dims() != got.kernels.dims() || expected.bias.dims() != got.bias.dims() {
                return Err(shape_err(
                    "model parameters",
                    &expected.kernels.dims(),
                    &got.kernels.dims(),
                ));
            }
        }
        model.params = params;
        model.metadata = metadata;
        Ok(model)
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    /// Pixel step between adjacent response units.
    pub fn stride(&self) -> usize {
        self.geometry.stride
    }

    /// `(R_w, R_h)`.
    pub fn receptive_field(&self) -> (usize, usize) {
        self.spec.input_size
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.kernels.len() + p.bias.len()).sum()
    }

    pub fn cast<U: Elem>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            geometry: self.geometry.clone(),
            templates: self.templates.clone(),
            params: self.params.iter().map(ConvParams::cast).collect(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn zero_grads(&self) -> Vec<ConvParams<T>> {
        self.params.iter().map(ConvParams::zeros_like).collect()
    }

    fn conv_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let (rw, rh) = self.spec.input_size;
        if input.channels() != self.spec.input_channels || input.height() < rh || input.width() < rw {
            return Err(shape_err(
                "network input (c, h, w) vs receptive field",
                &[self.spec.input_channels, rh, rw],
                &input.dims()[1..],
            ));
        }
        Ok(())
    }

    /// Raw `5K`-channel output for an input batch of any size >= R.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut conv_idx = 0;
        for layer in &self.spec.layers {
            x = match *layer {
                LayerSpec::Conv { stride, .. } => {
                    let p = &self.params[conv_idx];
                    conv_idx += 1;
                    let out = conv2d_forward(&x, &p.kernels, p.bias.data(), stride)?;
                    if conv_idx < self.conv_count() {
                        relu(&out)
                    } else {
                        out
                    }
                }
                LayerSpec::Pool { window, stride } => maxpool_forward(&x, window, stride)?.output,
            };
        }
        Ok(x)
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward_traced(&self, input: &Tensor<T>) -> Result<ForwardTrace<T>> {
        self.check_input(input)?;
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut x = input.clone();
        let mut conv_idx = 0;
        for layer in &self.spec.layers {
            match *layer {
                LayerSpec::Conv { stride, .. } => {
                    let p = &self.params[conv_idx];
                    conv_idx += 1;
                    let (out, cols) = conv2d_forward_cols(&x, &p.kernels, p.bias.data(), stride)?;
                    if conv_idx < self.conv_count() {
                        x = relu(&out);
                        caches.push(LayerCache::Conv {
                            cols,
                            pre_relu: Some(out),
                        });
                    } else {
                        x = out;
                        caches.push(LayerCache::Conv { cols, pre_relu: None });
                    }
                }
                LayerSpec::Pool { window, stride } => {
                    let pooled = maxpool_forward(&x, window, stride)?;
                    caches.push(LayerCache::Pool {
                        input_dims: x.dims(),
                        argmax: pooled.argmax,
                    });
                    x = pooled.output;
                }
            }
        }
        Ok(ForwardTrace { caches, output: x })
    }

    /// Backpropagates `output_grad` (shaped like the traced output) and
    /// returns parameter gradients in the layout of [`Model::params`].
    pub fn backward(&self, trace: ForwardTrace<T>, output_grad: Tensor<T>) -> Result<Vec<ConvParams<T>>> {
        if output_grad.dims() != trace.output.dims() {
            return Err(shape_err(
                "network output gradient",
                &trace.output.dims(),
                &output_grad.dims(),
            ));
        }
        let mut grads = self.zero_grads();
        let mut g = output_grad;
        let mut conv_idx = self.conv_count();
        let mut stride_iter = self.spec.layers.iter().rev();
        for cache in trace.caches.into_iter().rev() {
            let layer = stride_iter.next().expect("one cache per layer");
            match cache {
                LayerCache::Conv { cols, pre_relu } => {
                    conv_idx -= 1;
                    if let Some(pre) = pre_relu {
                        g = relu_backward(&pre, &g)?;
                    }
                    let p = &self.params[conv_idx];
                    // the image gradient below the first layer is never used
                    let (input_grad, mut pg) =
                        conv2d_backward_cols(cols, &p.kernels, layer.stride(), &g, conv_idx > 0)?;
                    let bias = pg.pop().expect("bias gradient");
                    let kernels = pg.pop().expect("kernel gradient");
                    grads[conv_idx] = ConvParams { kernels, bias };
                    if let Some(ig) = input_grad {
                        g = ig;
                    }
                }
                LayerCache::Pool { input_dims, argmax } => {
                    g = maxpool_backward(input_dims, &argmax, &g)?;
                }
            }
        }
        Ok(grads)
    }

    /// Head output for exactly one receptive-field-sized patch per batch item.
    pub fn forward_patch(&self, patch: &Tensor<T>) -> Result<HeadOutput<T>> {
        let (rw, rh) = self.spec.input_size;
        if patch.height() != rh || patch.width() != rw {
            return Err(shape_err(
                "patch size vs receptive field",
                &[rh, rw],
                &[patch.height(), patch.width()],
            ));
        }
        HeadOutput::split(&self.forward(patch)?, self.classes())
    }

    /// Dense response maps for a whole image; unit `(i, j)` covers the
    /// receptive field anchored at pixel `stride * (i, j)`.
    pub fn forward_full(&self, image: &Tensor<T>) -> Result<HeadOutput<T>> {
        HeadOutput::split(&self.forward(image)?, self.classes())
    }

    /// `W -= rate * grad`.
    pub fn apply_update(&mut self, grads: &[ConvParams<T>], rate: T) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            for (w, d) in p.kernels.data_mut().iter_mut().zip(g.kernels.data()) {
                *w = *w - rate * *d;
            }
            for (w, d) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                *w = *w - rate * *d;
            }
        }
    }

    /// Sum of squared kernel weights (biases excluded).
    pub fn weight_norm_sq(&self) -> T {
        self.params.iter().map(|p| p.kernels.sum_squares()).sum()
    }
}
