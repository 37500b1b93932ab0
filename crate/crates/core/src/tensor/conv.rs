use super::{shape_err, Elem, LayerGrad, Tensor};
use crate::error::{Error, Result};

struct ConvShape {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
}

impl ConvShape {
    fn new(input: [usize; 4], kernels: [usize; 4], stride: usize) -> Result<Self> {
        let [n, c, h, w] = input;
        let [out_c, kc, kh, kw] = kernels;
        if stride == 0 {
            return Err(Error::invalid("convolution stride must be positive"));
        }
        if kc != c || kh > h || kw > w {
            return Err(shape_err("conv2d input vs kernels", &kernels, &input));
        }
        Ok(ConvShape {
            n,
            c,
            h,
            w,
            out_c,
            kh,
            kw,
            oh: (h - kh) / stride + 1,
            ow: (w - kw) / stride + 1,
            stride,
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn out_dims(&self) -> [usize; 4] {
        [self.n, self.out_c, self.oh, self.ow]
    }
}

/// Unfolds every receptive window into a column: `cols[q][n * P + p]`.
fn im2col<T: Elem>(input: &Tensor<T>, s: &ConvShape) -> Vec<T> {
    let p_total = s.n * s.positions();
    let mut cols = vec![T::zero(); s.patch_len() * p_total];
    for b in 0..s.n {
        let item = input.item(b);
        for ch in 0..s.c {
            let plane = &item[ch * s.h * s.w..(ch + 1) * s.h * s.w];
            for ky in 0..s.kh {
                for kx in 0..s.kw {
                    let q = (ch * s.kh + ky) * s.kw + kx;
                    let row = &mut cols[q * p_total + b * s.positions()..][..s.positions()];
                    for oy in 0..s.oh {
                        let src = &plane[(oy * s.stride + ky) * s.w + kx..];
                        let dst = &mut row[oy * s.ow..(oy + 1) * s.ow];
                        if s.stride == 1 {
                            dst.copy_from_slice(&src[..s.ow]);
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = src[ox * s.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Elem>(cols: &[T], s: &ConvShape) -> Tensor<T> {
    let p_total = s.n * s.positions();
    let mut out = Tensor::zeros([s.n, s.c, s.h, s.w]);
    for b in 0..s.n {
        let item = out.item_mut(b);
        for ch in 0..s.c {
            let plane = &mut item[ch * s.h * s.w..(ch + 1) * s.h * s.w];
            for ky in 0..s.kh {
                for kx in 0..s.kw {
                    let q = (ch * s.kh + ky) * s.kw + kx;
                    let row = &cols[q * p_total + b * s.positions()..][..s.positions()];
                    for oy in 0..s.oh {
                        let base = (oy * s.stride + ky) * s.w + kx;
                        for ox in 0..s.ow {
                            plane[base + ox * s.stride] = plane[base + ox * s.stride] + row[oy * s.ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Valid (unpadded) cross-correlation.
///
/// `kernels` is `(out_channels, in_channels, kh, kw)`; `bias` has one entry
/// per output channel. Output extent per axis is `(in - k) / stride + 1`.
pub fn conv2d_forward<T: Elem>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &[T], stride: usize) -> Result<Tensor<T>> {
    conv2d_forward_cols(input, kernels, bias, stride).map(|(out, _)| out)
}

/// Unfolded input of a forward pass, reusable by [`conv2d_backward_cols`].
pub(crate) struct ConvCols<T> {
    input_dims: [usize; 4],
    cols: Vec<T>,
}

pub(crate) fn conv2d_forward_cols<T: Elem>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &[T],
    stride: usize,
) -> Result<(Tensor<T>, ConvCols<T>)> {
    let s = ConvShape::new(input.dims(), kernels.dims(), stride)?;
    if bias.len() != s.out_c {
        return Err(shape_err("conv2d bias", &[s.out_c], &[bias.len()]));
    }
    let cols = im2col(input, &s);
    let p_total = s.n * s.positions();
    let mut prod = vec![T::zero(); s.out_c * p_total];
    T::gemm(
        s.out_c,
        s.patch_len(),
        p_total,
        T::one(),
        kernels.data(),
        (s.patch_len() as isize, 1),
        &cols,
        (p_total as isize, 1),
        T::zero(),
        &mut prod,
        (p_total as isize, 1),
    );
    let mut out = Tensor::zeros(s.out_dims());
    let positions = s.positions();
    for b in 0..s.n {
        let item = out.item_mut(b);
        for (o, &bo) in bias.iter().enumerate() {
            let src = &prod[o * p_total + b * positions..][..positions];
            for (d, &v) in item[o * positions..(o + 1) * positions].iter_mut().zip(src) {
                *d = v + bo;
            }
        }
    }
    let cache = ConvCols {
        input_dims: input.dims(),
        cols,
    };
    Ok((out, cache))
}

/// Gradients of a valid convolution.
///
/// `param_grads` holds the kernel gradient followed by the bias gradient
/// (shaped `(out_channels, 1, 1, 1)`).
pub fn conv2d_backward<T: Elem>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    output_grad: &Tensor<T>,
) -> Result<LayerGrad<T>> {
    let s = ConvShape::new(input.dims(), kernels.dims(), stride)?;
    let cache = ConvCols {
        input_dims: input.dims(),
        cols: im2col(input, &s),
    };
    let (input_grad, param_grads) = conv2d_backward_cols(cache, kernels, stride, output_grad, true)?;
    Ok(LayerGrad {
        input_grad: input_grad.expect("input gradient requested"),
        param_grads,
    })
}

/// Backward pass from cached columns; the input gradient is only formed
/// when `want_input_grad` is set.
pub(crate) fn conv2d_backward_cols<T: Elem>(
    cache: ConvCols<T>,
    kernels: &Tensor<T>,
    stride: usize,
    output_grad: &Tensor<T>,
    want_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Vec<Tensor<T>>)> {
    let s = ConvShape::new(cache.input_dims, kernels.dims(), stride)?;
    if output_grad.dims() != s.out_dims() {
        return Err(shape_err("conv2d output gradient", &s.out_dims(), &output_grad.dims()));
    }
    let positions = s.positions();
    let p_total = s.n * positions;

    // Gather the output gradient into (out_c, n * P).
    let mut dout = vec![T::zero(); s.out_c * p_total];
    let mut bias_grad = vec![T::zero(); s.out_c];
    for b in 0..s.n {
        let item = output_grad.item(b);
        for o in 0..s.out_c {
            let src = &item[o * positions..(o + 1) * positions];
            dout[o * p_total + b * positions..][..positions].copy_from_slice(src);
            bias_grad[o] = bias_grad[o] + src.iter().copied().sum::<T>();
        }
    }

    let cols = cache.cols;
    let mut kernel_grad = vec![T::zero(); s.out_c * s.patch_len()];
    T::gemm(
        s.out_c,
        p_total,
        s.patch_len(),
        T::one(),
        &dout,
        (p_total as isize, 1),
        &cols,
        (1, p_total as isize),
        T::zero(),
        &mut kernel_grad,
        (s.patch_len() as isize, 1),
    );

    let input_grad = if want_input_grad {
        let mut dcols = cols;
        T::gemm(
            s.patch_len(),
            s.out_c,
            p_total,
            T::one(),
            kernels.data(),
            (1, s.patch_len() as isize),
            &dout,
            (p_total as isize, 1),
            T::zero(),
            &mut dcols,
            (p_total as isize, 1),
        );
        Some(col2im(&dcols, &s))
    } else {
        None
    };

    let param_grads = vec![
        Tensor::from_vec(kernels.dims(), kernel_grad)?,
        Tensor::from_vec([s.out_c, 1, 1, 1], bias_grad)?,
    ];
    Ok((input_grad, param_grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct quadruple loop; independent of the im2col path.
    fn naive_conv(input: &Tensor<f64>, k: &Tensor<f64>, bias: &[f64], stride: usize) -> Tensor<f64> {
        let [n, c, h, w] = input.dims();
        let [o, _, kh, kw] = k.dims();
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let mut out = Tensor::zeros([n, o, oh, ow]);
        for b in 0..n {
            for oc in 0..o {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = bias[oc];
                        for ic in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    acc += input.get(b, ic, y * stride + i, x * stride + j) * k.get(oc, ic, i, j);
                                }
                            }
                        }
                        out.set(b, oc, y, x, acc);
                    }
                }
            }
        }
        out
    }

    fn random(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let len = dims.iter().product();
        Tensor::from_vec(dims, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let input = Tensor::from_vec([1, 1, 2, 3], vec![1.0f32, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        let k = Tensor::from_vec([1, 1, 1, 1], vec![1.0f32]).unwrap();
        let out = conv2d_forward(&input, &k, &[0.0], 1).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn three_by_three_all_ones() {
        let input = Tensor::from_vec([1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let k = Tensor::filled([1, 1, 2, 2], 1.0f32);
        let out = conv2d_forward(&input, &k, &[0.0], 1).unwrap();
        assert_eq!(out.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn output_extent() {
        let input = Tensor::<f32>::zeros([1, 3, 29, 29]);
        let k = Tensor::<f32>::zeros([8, 3, 5, 5]);
        let out = conv2d_forward(&input, &k, &[0.0; 8], 1).unwrap();
        assert_eq!(out.dims(), [1, 8, 25, 25]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let input = Tensor::<f32>::zeros([1, 2, 5, 5]);
        let k = Tensor::<f32>::zeros([4, 3, 3, 3]);
        let err = conv2d_forward(&input, &k, &[0.0; 4], 1).unwrap_err().to_string();
        assert!(err.contains("[4, 3, 3, 3]") && err.contains("[1, 2, 5, 5]"), "{err}");
        let big = Tensor::<f32>::zeros([4, 2, 6, 6]);
        assert!(conv2d_forward(&input, &big, &[0.0; 4], 1).is_err());
    }

    #[test]
    fn matches_naive_with_strides_and_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for stride in 1..=3 {
            let input = random([2, 3, 9, 7], &mut rng);
            let k = random([4, 3, 3, 2], &mut rng);
            let bias = [0.1, -0.2, 0.3, 0.0];
            let fast = conv2d_forward(&input, &k, &bias, stride).unwrap();
            let slow = naive_conv(&input, &k, &bias, stride);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random([1, 2, 6, 6], &mut rng);
        let k = random([3, 2, 3, 3], &mut rng);
        let g = conv2d_backward(&input, &k, 1, &Tensor::zeros([1, 3, 4, 4])).unwrap();
        assert!(g.input_grad.data().iter().all(|&v| v == 0.0));
        assert!(g.param_grads.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn identity_kernel_passes_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random([1, 1, 4, 4], &mut rng);
        let k = Tensor::filled([1, 1, 1, 1], 1.0);
        let dout = random([1, 1, 4, 4], &mut rng);
        let g = conv2d_backward(&input, &k, 1, &dout).unwrap();
        assert_eq!(g.input_grad, dout);
    }

    #[test]
    fn backward_rejects_wrong_output_grad() {
        let input = Tensor::<f64>::zeros([1, 1, 4, 4]);
        let k = Tensor::<f64>::zeros([1, 1, 2, 2]);
        assert!(conv2d_backward(&input, &k, 1, &Tensor::zeros([1, 1, 2, 2])).is_err());
    }
}
