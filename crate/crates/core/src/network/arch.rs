use std::fmt;

use crate::error::{Error, Result};

/// One layer of a proposal network. Every convolution except the last is
/// followed by a ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Pool {
        window: usize,
        stride: usize,
    },
}

impl LayerSpec {
    pub fn stride(&self) -> usize {
        match *self {
            LayerSpec::Conv { stride, .. } | LayerSpec::Pool { stride, .. } => stride,
        }
    }

    fn window(&self) -> usize {
        match *self {
            LayerSpec::Conv { kernel, .. } => kernel,
            LayerSpec::Pool { window, .. } => window,
        }
    }

    /// Spatial extent after this layer, or `None` if the window does not fit.
    pub fn output_extent(&self, extent: usize) -> Option<usize> {
        let k = self.window();
        (extent >= k).then(|| (extent - k) / self.stride() + 1)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
            } => write!(f, "{out_channels}C{kernel}S{stride}"),
            LayerSpec::Pool { window, stride } => write!(f, "P{window}S{stride}"),
        }
    }
}

/// Layer list plus the input geometry it was designed for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    /// Receptive field `(R_w, R_h)` in pixels.
    pub input_size: (usize, usize),
    pub input_channels: usize,
    /// Class count `K`, background included.
    pub classes: usize,
}

const fn conv(out_channels: usize, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv {
        out_channels,
        kernel,
        stride,
    }
}

const fn pool(window: usize, stride: usize) -> LayerSpec {
    LayerSpec::Pool { window, stride }
}

/// Names accepted by [`builtin_spec`].
pub const BUILTIN_NAMES: &[&str] = &["cpn-eng", "cpn-chs", "cpn-eng-small", "cpn-eng-tiny"];

/// Built-in architectures.
///
/// * `cpn-eng`: 29x29x3 input, 96C5S1-P3S2-256C4S1-P3S2-384C3S1-512C2S1-256C1S1, 5K head.
/// * `cpn-chs`: 43x43x3 input, 96C5S1-P3S2-256C5S1-P3S2-384C3S1-384C3S1-512C2S1-512C2S1, 5K head.
/// * `cpn-eng-small` / `cpn-eng-tiny`: the `cpn-eng` layout with narrower
///   layers, for CPU-scale training.
///
/// The 5K head is a 1x1 convolution appended after the listed layers.
pub fn builtin_spec(name: &str, classes: usize) -> Result<ArchitectureSpec> {
    if classes < 2 {
        return Err(Error::invalid("class count K must be at least 2"));
    }
    let head = conv(5 * classes, 1, 1);
    let eng = |w: [usize; 5]| {
        vec![
            conv(w[0], 5, 1),
            pool(3, 2),
            conv(w[1], 4, 1),
            pool(3, 2),
            conv(w[2], 3, 1),
            conv(w[3], 2, 1),
            conv(w[4], 1, 1),
            head,
        ]
    };
    let (layers, input) = match name.to_ascii_lowercase().as_str() {
        "cpn-eng" => (eng([96, 256, 384, 512, 256]), 29),
        "cpn-eng-small" => (eng([32, 64, 96, 128, 128]), 29),
        "cpn-eng-tiny" => (eng([16, 32, 48, 64, 64]), 29),
        "cpn-chs" => (
            vec![
                conv(96, 5, 1),
                pool(3, 2),
                conv(256, 5, 1),
                pool(3, 2),
                conv(384, 3, 1),
                conv(384, 3, 1),
                conv(512, 2, 1),
                conv(512, 2, 1),
                head,
            ],
            43,
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown architecture '{other}' (expected one of {})",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    ArchitectureSpec::new(name.to_ascii_lowercase(), layers, (input, input), 3, classes)
}

impl ArchitectureSpec {
    /// Validated constructor: the receptive field must reduce to 1x1 and the
    /// last layer must be a convolution emitting `5K` channels.
    pub fn new(
        name: impl Into<String>,
        layers: Vec<LayerSpec>,
        input_size: (usize, usize),
        input_channels: usize,
        classes: usize,
    ) -> Result<Self> {
        let spec = ArchitectureSpec {
            name: name.into(),
            layers,
            input_size,
            input_channels,
            classes,
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("class count K must be at least 2".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input channel count must be positive".into()));
        }
        for layer in &self.layers {
            let ok = match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                } => out_channels > 0 && kernel > 0 && stride > 0,
                LayerSpec::Pool { window, stride } => window > 0 && stride > 0,
            };
            if !ok {
                return Err(Error::Config(format!("layer {layer} has a zero extent")));
            }
        }
        match self.layers.last() {
            Some(LayerSpec::Conv { out_channels, .. }) if *out_channels == 5 * self.classes => {}
            _ => {
                return Err(Error::Config(format!(
                    "final layer must be a convolution with 5K = {} channels",
                    5 * self.classes
                )))
            }
        }
        validate_geometry(self).map(|_| ())
    }

    pub fn head_channels(&self) -> usize {
        5 * self.classes
    }

    /// Layer string in the `96C5S1-P3S2-...` notation.
    pub fn describe(&self) -> String {
        let (w, h) = self.input_size;
        let body: Vec<String> = self.layers.iter().map(|l| l.to_string()).collect();
        format!("{w}x{h}x{} input-{}", self.input_channels, body.join("-"))
    }
}

/// Product of all layer strides: the pixel step between adjacent response units.
pub fn compute_stride(spec: &ArchitectureSpec) -> usize {
    spec.layers.iter().map(LayerSpec::stride).product()
}

/// Shape arithmetic for an architecture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    layers: Vec<LayerSpec>,
    pub receptive_field: (usize, usize),
    pub stride: usize,
}

impl Geometry {
    /// Extents after every layer for an input extent (first entry is the input).
    pub fn trace(&self, extent: usize) -> Option<Vec<usize>> {
        let mut out = vec![extent];
        let mut e = extent;
        for layer in &self.layers {
            e = layer.output_extent(e)?;
            out.push(e);
        }
        Some(out)
    }

    /// Response map size `(h', w')` for an input of `(h, w)`.
    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let h = *self.trace(height)?.last()?;
        let w = *self.trace(width)?.last()?;
        Some((h, w))
    }
}

/// Checks that the receptive field maps to exactly one response unit.
pub fn validate_geometry(spec: &ArchitectureSpec) -> Result<Geometry> {
    let geometry = Geometry {
        layers: spec.layers.clone(),
        receptive_field: spec.input_size,
        stride: compute_stride(spec),
    };
    let (rw, rh) = spec.input_size;
    match geometry.output_size(rh, rw) {
        Some((1, 1)) => Ok(geometry),
        other => Err(Error::Config(format!(
            "receptive field {rw}x{rh} maps to {other:?} instead of 1x1 for {}",
            spec.name
        ))),
    }
}
