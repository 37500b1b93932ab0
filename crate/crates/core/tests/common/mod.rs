//! Reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use charprop::inference::Proposal;
use charprop::network::{ArchitectureSpec, ConvParams, Init, LayerSpec, Model};
use charprop::templates::TemplateSet;
use charprop::tensor::{conv2d_forward, Tensor};
use charprop::training::{joint_loss, Batch, LossWeights};
use charprop::BBox;
use rand::Rng;

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn random_tensor<R: Rng>(rng: &mut R, dims: [usize; 4], scale: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn random_box<R: Rng>(rng: &mut R, extent: f64) -> BBox {
    BBox::new(
        rng.random_range(-extent..extent),
        rng.random_range(-extent..extent),
        rng.random_range(0.5..extent),
        rng.random_range(0.5..extent),
    )
}

/// Central finite difference of `f` with respect to `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, step: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + step;
    let plus = f(x);
    x[i] = orig - step;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * step)
}

/// Conv-pool-conv network with a 1x1 output: 7x7x3 input, `6C3S1-P3S2-5KC2S1`.
pub fn miniature_model(classes: usize, seed: u64) -> Model<f64> {
    let spec = ArchitectureSpec::new(
        "miniature",
        vec![
            LayerSpec::Conv {
                out_channels: 6,
                kernel: 3,
                stride: 1,
            },
            LayerSpec::Pool { window: 3, stride: 2 },
            LayerSpec::Conv {
                out_channels: 5 * classes,
                kernel: 2,
                stride: 1,
            },
        ],
        (7, 7),
        3,
        classes,
    )
    .unwrap();
    let ratios: Vec<f64> = (0..classes - 1)
        .map(|i| 2f64.powf(i as f64 - (classes as f64 - 2.0) / 2.0))
        .collect();
    let templates = TemplateSet::new(ratios, (7.0, 7.0), Default::default()).unwrap();
    Model::new(spec, templates, Init::Gaussian { std: 0.3 }, seed).unwrap()
}

/// Random batch whose first-layer activations keep clear of the ReLU and
/// max-pool kinks, so a central difference never straddles one.
pub fn random_batch<R: Rng>(rng: &mut R, model: &Model<f64>, n: usize) -> Batch<f64> {
    loop {
        let batch = draw_batch(rng, model, n);
        if clear_of_kinks(model, &batch.input, 0.003) {
            return batch;
        }
    }
}

fn draw_batch<R: Rng>(rng: &mut R, model: &Model<f64>, n: usize) -> Batch<f64> {
    let (rw, rh) = model.spec().input_size;
    let k = model.classes();
    let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let targets = classes
        .iter()
        .map(|&c| (c + 1 < k).then(|| [0; 4].map(|_| rng.random_range(-0.5..0.5))))
        .collect();
    Batch {
        input: random_tensor(rng, [n, 3, rh, rw], 0.5),
        classes,
        targets,
    }
}

/// Checks the miniature's conv-relu-pool front end: every pre-activation is
/// at least `margin` from zero and every positive pooling maximum beats the
/// runner-up in its window by `margin`.
fn clear_of_kinks(model: &Model<f64>, input: &Tensor<f64>, margin: f64) -> bool {
    let (window, stride) = match model.spec().layers[1] {
        LayerSpec::Pool { window, stride } => (window, stride),
        _ => panic!("expected conv-pool-conv"),
    };
    let p = &model.params[0];
    let z = conv2d_forward(input, &p.kernels, p.bias.data(), 1).unwrap();
    if z.data().iter().any(|v| v.abs() < margin) {
        return false;
    }
    let [n, c, h, w] = z.dims();
    for b in 0..n {
        for ch in 0..c {
            for y in (0..=h - window).step_by(stride) {
                for x in (0..=w - window).step_by(stride) {
                    let mut vals: Vec<f64> = (0..window * window)
                        .map(|i| z.get(b, ch, y + i / window, x + i % window).max(0.0))
                        .collect();
                    vals.sort_by(|a, b| b.total_cmp(a));
                    if vals[0] > 0.0 && vals[0] - vals[1] < margin {
                        return false;
                    }
                }
            }
        }
    }
    true
}

fn param_slice_mut(params: &mut [ConvParams<f64>], layer: usize, bias: bool) -> &mut [f64] {
    if bias {
        params[layer].bias.data_mut()
    } else {
        params[layer].kernels.data_mut()
    }
}

/// Largest elementwise relative error between the analytic joint-loss
/// gradient and central differences over every parameter.
pub fn joint_loss_fd_error(model: &Model<f64>, batch: &Batch<f64>, weights: LossWeights, step: f64) -> f64 {
    let (_, grads) = joint_loss(model, batch, weights).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for layer in 0..model.params.len() {
        for bias in [false, true] {
            let len = param_slice_mut(&mut probe.params, layer, bias).len();
            for i in 0..len {
                let orig = param_slice_mut(&mut probe.params, layer, bias)[i];
                let mut eval = |v: f64| {
                    param_slice_mut(&mut probe.params, layer, bias)[i] = v;
                    joint_loss(&probe, batch, weights).unwrap().0.total
                };
                let numeric = (eval(orig + step) - eval(orig - step)) / (2.0 * step);
                param_slice_mut(&mut probe.params, layer, bias)[i] = orig;
                let analytic = if bias {
                    grads[layer].bias.data()[i]
                } else {
                    grads[layer].kernels.data()[i]
                };
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
    }
    worst
}

/// NMS by repeated removal: take the best remaining proposal, delete every
/// remaining proposal overlapping it by more than the threshold, repeat.
pub fn brute_force_nms(proposals: &[Proposal], threshold: f64) -> Vec<Proposal> {
    let mut remaining: Vec<(usize, Proposal)> = proposals.iter().copied().enumerate().collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for j in 1..remaining.len() {
            let (bi, b) = remaining[best];
            let (ji, c) = remaining[j];
            if c.score > b.score || (c.score == b.score && ji < bi) {
                best = j;
            }
        }
        let (_, winner) = remaining.remove(best);
        remaining.retain(|(_, p)| p.bbox.iou(&winner.bbox) <= threshold);
        kept.push(winner);
    }
    kept
}

/// Recall computed with explicit loops: rank each image's proposals by score,
/// cut at `top_n`, count truths with any IoU strictly above the threshold.
pub fn brute_force_recall(
    proposals: &BTreeMap<String, Vec<Proposal>>,
    truths: &BTreeMap<String, Vec<BBox>>,
    iou_threshold: f64,
    top_n: usize,
) -> (usize, usize) {
    let mut matched = 0;
    let mut total = 0;
    for (id, boxes) in truths {
        let mut ranked = proposals.get(id).cloned().unwrap_or_default();
        ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        ranked.truncate(top_n);
        for t in boxes {
            total += 1;
            let mut hit = false;
            for p in &ranked {
                let ix = (t.x + t.w).min(p.bbox.x + p.bbox.w) - t.x.max(p.bbox.x);
                let iy = (t.y + t.h).min(p.bbox.y + p.bbox.h) - t.y.max(p.bbox.y);
                let inter = ix.max(0.0) * iy.max(0.0);
                let union = t.w * t.h + p.bbox.w * p.bbox.h - inter;
                if inter / union > iou_threshold {
                    hit = true;
                }
            }
            matched += hit as usize;
        }
    }
    (matched, total)
}
