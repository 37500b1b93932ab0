//! Binary model container.
//!
//! ```text
//! "CPNM" | u32 version
//! str name | u32 R_w | u32 R_h | u32 input_channels | u32 K
//! u32 layer_count | per layer: u8 tag (0 conv, 1 pool) | u32 a | u32 b | u32 c
//! u8 sizing | u32 template_count | per template: f64 ratio | f64 w | f64 h
//! u32 metadata_count | per entry: str key | str value
//! u32 conv_count | per conv: u32 dims[4] | u64 n | n x f32 kernels | u64 m | m x f32 bias
//! ```
//!
//! All integers and floats are little-endian; `str` is a u32 byte length
//! followed by UTF-8.

use std::collections::BTreeMap;
use std::path::Path;

use super::arch::{ArchitectureSpec, LayerSpec};
use super::model::{ConvParams, Model};
use crate::error::{Error, Result};
use crate::templates::{TemplateSet, TemplateSizing};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CPNM";
pub const FORMAT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f32s(&mut self, values: &[f32]) {
        self.u64(values.len());
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated model at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Format("length overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }
    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.u64()?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("blob too large".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

impl Model<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION as usize);

        let spec = self.spec();
        w.str(&spec.name);
        w.u32(spec.input_size.0);
        w.u32(spec.input_size.1);
        w.u32(spec.input_channels);
        w.u32(spec.classes);
        w.u32(spec.layers.len());
        for layer in &spec.layers {
            match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                } => {
                    w.u8(0);
                    w.u32(out_channels);
                    w.u32(kernel);
                    w.u32(stride);
                }
                LayerSpec::Pool { window, stride } => {
                    w.u8(1);
                    w.u32(window);
                    w.u32(stride);
                    w.u32(0);
                }
            }
        }

        let t = self.templates();
        w.u8(match t.sizing() {
            TemplateSizing::AspectPreserving => 0,
            TemplateSizing::Literal => 1,
        });
        w.u32(t.len());
        for (&ratio, &(tw, th)) in t.ratios().iter().zip(t.sizes()) {
            w.f64(ratio);
            w.f64(tw);
            w.f64(th);
        }

        w.u32(self.metadata.len());
        for (k, v) in &self.metadata {
            w.str(k);
            w.str(v);
        }

        w.u32(self.params.len());
        for p in &self.params {
            for d in p.kernels.dims() {
                w.u32(d);
            }
            w.f32s(p.kernels.data());
            w.f32s(p.bias.data());
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("missing CPNM magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }

        let name = r.str()?;
        let input_size = (r.u32()?, r.u32()?);
        let input_channels = r.u32()?;
        let classes = r.u32()?;
        let layer_count = r.u32()?;
        let mut layers = Vec::with_capacity(layer_count.min(1024));
        for _ in 0..layer_count {
            let tag = r.u8()?;
            let (a, b, c) = (r.u32()?, r.u32()?, r.u32()?);
            layers.push(match tag {
                0 => LayerSpec::Conv {
                    out_channels: a,
                    kernel: b,
                    stride: c,
                },
                1 => LayerSpec::Pool { window: a, stride: b },
                other => return Err(Error::Format(format!("unknown layer tag {other}"))),
            });
        }
        let spec = ArchitectureSpec::new(name, layers, input_size, input_channels, classes)?;

        let sizing = match r.u8()? {
            0 => TemplateSizing::AspectPreserving,
            1 => TemplateSizing::Literal,
            other => return Err(Error::Format(format!("unknown template sizing {other}"))),
        };
        let count = r.u32()?;
        let mut ratios = Vec::with_capacity(count.min(1024));
        let mut sizes = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            ratios.push(r.f64()?);
            sizes.push((r.f64()?, r.f64()?));
        }
        let templates = TemplateSet::from_parts(ratios, sizes, sizing)?;

        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.str()?;
            metadata.insert(k, r.str()?);
        }

        let conv_count = r.u32()?;
        let mut params = Vec::with_capacity(conv_count.min(1024));
        for _ in 0..conv_count {
            let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
            let kernels = Tensor::from_vec(dims, r.f32s()?)?;
            let bias_data = r.f32s()?;
            let bias = Tensor::from_vec([bias_data.len(), 1, 1, 1], bias_data)?;
            params.push(ConvParams { kernels, bias });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Model::from_parts(spec, templates, params, metadata)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes)
    }
}
