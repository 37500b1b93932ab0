//! Minimal dense numerics for the proposal network.
//!
//! Everything here works on 4-D tensors in `(batch, channels, height, width)`
//! order. Layers are free functions with an explicit backward counterpart;
//! there is no autodiff graph. The element type is generic so the same code
//! runs in `f32` for training and inference and in `f64` for gradient checks.

mod activation;
mod conv;
mod loss;
mod pool;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d_backward, conv2d_forward};
pub(crate) use conv::{conv2d_backward_cols, conv2d_forward_cols, ConvCols};
pub use loss::{mse_loss, softmax, softmax_cross_entropy};
pub use pool::{maxpool_backward, maxpool_forward, PoolOutput};

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar types the layers can run on.
pub trait Elem: Float + Default + Debug + Sum + Send + Sync + 'static {
    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn from_f64(v: f64) -> Self;
}

fn check_gemm_extent(len: usize, rows: usize, cols: usize, strides: (isize, isize)) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * strides.0 + (cols - 1) as isize * strides.1;
    assert!(
        strides.0 >= 0 && strides.1 >= 0 && (last as usize) < len,
        "gemm operand out of bounds"
    );
}

macro_rules! impl_elem {
    ($t:ty, $gemm:path) => {
        impl Elem for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                check_gemm_extent(a.len(), m, k, a_strides);
                check_gemm_extent(b.len(), k, n, b_strides);
                check_gemm_extent(c.len(), m, n, c_strides);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand extent was bounds-checked above and the
                // output does not alias the inputs (distinct borrows).
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }

            fn from_f64(v: f64) -> Self {
                v as $t
            }
        }
    };
}

impl_elem!(f32, matrixmultiply::sgemm);
impl_elem!(f64, matrixmultiply::dgemm);

/// Dense 4-D array, row-major in `(n, c, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Elem> Tensor<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: [usize; 4], value: T) -> Self {
        assert!(dims.iter().all(|&d| d >= 1), "tensor extents must be >= 1");
        Tensor {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("tensor extents must be >= 1, got {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                context: "tensor construction",
                expected: vec![expected],
                actual: vec![data.len()],
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(n < self.dims[0] && c < self.dims[1] && y < self.dims[2] && x < self.dims[3]);
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// Contiguous `(c, h, w)` block of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let stride = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let stride = self.dims[1] * self.dims[2] * self.dims[3];
        &mut self.data[n * stride..(n + 1) * stride]
    }

    /// Reinterprets the same data with new extents.
    pub fn reshape(self, dims: [usize; 4]) -> Result<Self> {
        Tensor::from_vec(dims, self.data)
    }

    pub fn cast<U: Elem>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    /// Copies a spatial window of every channel of batch item `n`.
    pub fn crop(&self, n: usize, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if n >= self.dims[0] || y0 + h > self.dims[2] || x0 + w > self.dims[3] || h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "crop ({n}, {y0}, {x0}, {h}, {w}) outside tensor {:?}",
                self.dims
            )));
        }
        let c = self.dims[1];
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in y0..y0 + h {
                let start = self.offset(n, ch, y, x0);
                out.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Tensor::from_vec([1, c, h, w], out)
    }

    /// Stacks single-item tensors of identical `(c, h, w)` into one batch.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack an empty list of tensors"))?;
        let [_, c, h, w] = first.dims;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut n = 0;
        for t in items {
            if t.dims[1..] != first.dims[1..] {
                return Err(Error::ShapeMismatch {
                    context: "tensor stack",
                    expected: first.dims.to_vec(),
                    actual: t.dims.to_vec(),
                });
            }
            n += t.dims[0];
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec([n, c, h, w], data)
    }

    /// Copies channels `[start, end)` of every batch item.
    pub fn channel_slice(&self, start: usize, end: usize) -> Result<Self> {
        let [n, c, h, w] = self.dims;
        if start >= end || end > c {
            return Err(Error::invalid(format!(
                "channel range {start}..{end} outside {c} channels"
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (end - start) * plane);
        for b in 0..n {
            let item = self.item(b);
            data.extend_from_slice(&item[start * plane..end * plane]);
        }
        Tensor::from_vec([n, end - start, h, w], data)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Gradients produced by one layer's backward pass.
#[derive(Clone, Debug)]
pub struct LayerGrad<T = f32> {
    pub input_grad: Tensor<T>,
    /// One entry per layer parameter, in the layer's parameter order.
    pub param_grads: Vec<Tensor<T>>,
}

pub(crate) fn shape_err(context: &'static str, expected: &[usize], actual: &[usize]) -> Error {
    Error::ShapeMismatch {
        context,
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}
