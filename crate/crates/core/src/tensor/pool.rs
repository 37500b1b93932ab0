use super::{shape_err, Elem, Tensor};
use crate::error::{Error, Result};

/// Max-pooling result with the winning input offset of every output cell.
#[derive(Clone, Debug)]
pub struct PoolOutput<T = f32> {
    pub output: Tensor<T>,
    /// Flat index into the input tensor's data, one per output element.
    pub argmax: Vec<usize>,
}

/// Max-pooling over square windows without padding.
///
/// Ties resolve to the first cell in row-major order.
pub fn maxpool_forward<T: Elem>(input: &Tensor<T>, window: usize, stride: usize) -> Result<PoolOutput<T>> {
    let [n, c, h, w] = input.dims();
    if window == 0 || stride == 0 {
        return Err(Error::invalid("pooling window and stride must be positive"));
    }
    if window > h || window > w {
        return Err(shape_err("maxpool window vs input", &[window, window], &[h, w]));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + oy * stride * w + ox * stride;
                let mut best = data[best_idx];
                for y in oy * stride..oy * stride + window {
                    for x in ox * stride..ox * stride + window {
                        let idx = base + y * w + x;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(PoolOutput {
        output: Tensor::from_vec([n, c, oh, ow], out)?,
        argmax,
    })
}

/// Routes each output gradient to the input cell that won the forward max.
pub fn maxpool_backward<T: Elem>(
    input_dims: [usize; 4],
    argmax: &[usize],
    output_grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != output_grad.len() {
        return Err(shape_err("maxpool backward", &[argmax.len()], &[output_grad.len()]));
    }
    let mut grad = Tensor::zeros(input_dims);
    let g = grad.data_mut();
    for (&idx, &d) in argmax.iter().zip(output_grad.data()) {
        if idx >= g.len() {
            return Err(Error::invalid("argmax index outside the pooled input"));
        }
        g[idx] = g[idx] + d;
    }
    Ok(grad)
}
