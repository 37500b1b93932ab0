use super::{shape_err, Elem, Tensor};
use crate::error::Result;

pub fn relu<T: Elem>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    for v in out.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
    out
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<T: Elem>(input: &Tensor<T>, output_grad: &Tensor<T>) -> Result<Tensor<T>> {
    if input.dims() != output_grad.dims() {
        return Err(shape_err("relu backward", &input.dims(), &output_grad.dims()));
    }
    let mut grad = output_grad.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        if !(x > T::zero()) {
            *g = T::zero();
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let t = Tensor::from_vec([1, 1, 1, 3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn positive_input_is_identity() {
        let t = Tensor::from_vec([1, 2, 1, 2], vec![0.5f32, 1.0, 7.0, 3.0]).unwrap();
        assert_eq!(relu(&t), t);
        let g = Tensor::filled([1, 2, 1, 2], 2.0f32);
        assert_eq!(relu_backward(&t, &g).unwrap(), g);
    }
}
