mod common;

use charprop::tensor::{
    conv2d_backward, conv2d_forward, maxpool_backward, maxpool_forward, relu, relu_backward, softmax_cross_entropy,
    Tensor,
};
use charprop::training::LossWeights;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;

/// Scalar probe `sum(out * weights)` so every output element carries a distinct gradient.
fn probe(out: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (dims, kdims, stride) in [
        ([2, 3, 7, 6], [4, 3, 3, 2], 1),
        ([1, 2, 9, 9], [3, 2, 3, 3], 2),
        ([3, 1, 5, 5], [2, 1, 5, 5], 1),
    ] {
        let mut input = random_tensor(&mut rng, dims, 1.0);
        let mut kernels = random_tensor(&mut rng, kdims, 1.0);
        let mut bias: Vec<f64> = (0..kdims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = conv2d_forward(&input, &kernels, &bias, stride).unwrap();
        let w = random_tensor(&mut rng, out.dims(), 1.0);
        let grads = conv2d_backward(&input, &kernels, stride, &w).unwrap();

        let (k0, b0) = (kernels.clone(), bias.clone());
        for i in 0..input.len() {
            let n = central_diff(input.data_mut(), i, STEP, |x| {
                let t = Tensor::from_vec(dims, x.to_vec()).unwrap();
                probe(&conv2d_forward(&t, &k0, &b0, stride).unwrap(), &w)
            });
            assert!(rel_err(grads.input_grad.data()[i], n) < 1e-4);
        }
        let inp = input.clone();
        for i in 0..kernels.len() {
            let n = central_diff(kernels.data_mut(), i, STEP, |k| {
                let t = Tensor::from_vec(kdims, k.to_vec()).unwrap();
                probe(&conv2d_forward(&inp, &t, &b0, stride).unwrap(), &w)
            });
            assert!(rel_err(grads.param_grads[0].data()[i], n) < 1e-4);
        }
        for i in 0..bias.len() {
            let n = central_diff(&mut bias, i, STEP, |b| {
                probe(&conv2d_forward(&inp, &k0, b, stride).unwrap(), &w)
            });
            assert!(rel_err(grads.param_grads[1].data()[i], n) < 1e-4);
        }
        assert_eq!(grads.param_grads[1].dims(), [kdims[0], 1, 1, 1]);
    }
}

#[test]
fn conv_zero_output_gradient_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = random_tensor(&mut rng, [2, 3, 6, 6], 1.0);
    let kernels = random_tensor(&mut rng, [4, 3, 3, 3], 1.0);
    let g = conv2d_backward(&input, &kernels, 1, &Tensor::zeros([2, 4, 4, 4])).unwrap();
    assert!(g.input_grad.data().iter().all(|&v| v == 0.0));
    assert!(g.param_grads.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn conv_identity_kernel_passes_gradient_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = random_tensor(&mut rng, [1, 1, 4, 5], 1.0);
    let kernels = Tensor::filled([1, 1, 1, 1], 1.0);
    assert_eq!(conv2d_forward(&input, &kernels, &[0.0], 1).unwrap(), input);
    let og = random_tensor(&mut rng, [1, 1, 4, 5], 1.0);
    assert_eq!(conv2d_backward(&input, &kernels, 1, &og).unwrap().input_grad, og);
}

#[test]
fn maxpool_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dims = [2, 3, 9, 8];
    // well-separated values keep every window's maximum stable under the probe step
    let mut values: Vec<f64> = (0..dims.iter().product::<usize>()).map(|i| i as f64 * 0.01).collect();
    for i in (1..values.len()).rev() {
        values.swap(i, rng.random_range(0..=i));
    }
    let mut input = Tensor::from_vec(dims, values).unwrap();
    let out = maxpool_forward(&input, 3, 2).unwrap();
    let w = random_tensor(&mut rng, out.output.dims(), 1.0);
    let g = maxpool_backward(dims, &out.argmax, &w).unwrap();
    for i in 0..input.len() {
        let n = central_diff(input.data_mut(), i, STEP, |x| {
            let t = Tensor::from_vec(dims, x.to_vec()).unwrap();
            probe(&maxpool_forward(&t, 3, 2).unwrap().output, &w)
        });
        let a = g.data()[i];
        assert!(rel_err(a, n) < 1e-4, "{i}: {a} vs {n}");
    }
}

#[test]
fn relu_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = [2, 2, 4, 4];
    let n_el = dims.iter().product();
    // keep inputs away from the kink
    let data: Vec<f64> = (0..n_el)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let mut input = Tensor::from_vec(dims, data).unwrap();
    let w = random_tensor(&mut rng, dims, 1.0);
    let g = relu_backward(&input, &w).unwrap();
    for i in 0..n_el {
        let n = central_diff(input.data_mut(), i, STEP, |x| {
            probe(&relu(&Tensor::from_vec(dims, x.to_vec()).unwrap()), &w)
        });
        assert!(rel_err(g.data()[i], n) < 1e-4);
    }
}

#[test]
fn softmax_cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in [2, 4, 7] {
        for _ in 0..20 {
            let mut logits: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
            let label = rng.random_range(0..k);
            let (_, g) = softmax_cross_entropy(&logits, label).unwrap();
            for i in 0..k {
                let n = central_diff(&mut logits, i, STEP, |l| softmax_cross_entropy(l, label).unwrap().0);
                assert!(rel_err(g[i], n) < 1e-5, "{} vs {n}", g[i]);
            }
        }
    }
}

#[test]
fn softmax_cross_entropy_survives_large_logits() {
    let (loss, g) = softmax_cross_entropy(&[1000.0f64, 0.0, -1000.0], 0).unwrap();
    assert!(loss.is_finite() && loss.abs() < 1e-12);
    assert!(g.iter().all(|v| v.is_finite()));
}

#[test]
fn joint_loss_gradient_on_miniature_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = miniature_model(4, 11);
    for weights in [
        LossWeights::default(),
        LossWeights {
            alpha: 0.2,
            weight_decay: 0.01,
        },
    ] {
        let batch = random_batch(&mut rng, &model, 5);
        let err = joint_loss_fd_error(&model, &batch, weights, STEP);
        assert!(err < 1e-3, "relative error {err}");
    }
}
