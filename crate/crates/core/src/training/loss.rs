use crate::error::{Error, Result};
use crate::network::{ConvParams, Model};
use crate::tensor::{mse_loss, softmax_cross_entropy, Elem, Tensor};

use super::samples::TrainingSample;

/// Stacked patches and labels for one minibatch.
#[derive(Clone, Debug)]
pub struct Batch<T = f32> {
    /// `(N, 3, R_h, R_w)`.
    pub input: Tensor<T>,
    pub classes: Vec<usize>,
    pub targets: Vec<Option<[f64; 4]>>,
}

impl Batch<f32> {
    pub fn from_samples(samples: &[&TrainingSample]) -> Result<Self> {
        let patches: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.patch).collect();
        Ok(Batch {
            input: Tensor::stack(&patches)?,
            classes: samples.iter().map(|s| s.class).collect(),
            targets: samples.iter().map(|s| s.target).collect(),
        })
    }
}

impl<T: Elem> Batch<T> {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn cast<U: Elem>(&self) -> Batch<U> {
        Batch {
            input: self.input.cast(),
            classes: self.classes.clone(),
            targets: self.targets.clone(),
        }
    }
}

/// Loss weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Classification share `alpha`; regression gets `1 - alpha`.
    pub alpha: f64,
    /// Weight decay `lambda` on all kernel weights.
    pub weight_decay: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.5,
            weight_decay: 5e-4,
        }
    }
}

/// Loss value and its parts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// `alpha * cls + (1 - alpha) * reg + decay`.
    pub total: f64,
    /// Mean cross-entropy over the batch.
    pub cls: f64,
    /// Mean squared error over the true template's four regression outputs
    /// of every character sample (zero for an all-background batch).
    pub reg: f64,
    /// `lambda * ||W||^2`.
    pub decay: f64,
}

/// Multi-task loss and its gradient with respect to every parameter.
///
/// Classification uses softmax cross-entropy over the `K` logits. Regression
/// only sees the four outputs belonging to the sample's own template, so
/// background samples contribute nothing to it.
pub fn joint_loss<T: Elem>(
    model: &Model<T>,
    batch: &Batch<T>,
    weights: LossWeights,
) -> Result<(LossBreakdown, Vec<ConvParams<T>>)> {
    if batch.is_empty() {
        return Err(Error::invalid("joint loss needs a non-empty batch"));
    }
    let k = model.classes();
    let n = batch.len();
    let trace = model.forward_traced(&batch.input)?;
    let out = &trace.output;
    if out.height() != 1 || out.width() != 1 {
        return Err(Error::invalid("training patches must match the receptive field"));
    }

    let alpha = T::from_f64(weights.alpha);
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut grad = Tensor::zeros(out.dims());
    let mut cls = T::zero();

    let mut pred = vec![T::zero(); n * 4 * k];
    let mut target = vec![T::zero(); n * 4 * k];
    let mut mask = vec![T::zero(); n * 4 * k];

    for i in 0..n {
        let row = out.item(i);
        let (ce, g) = softmax_cross_entropy(&row[..k], batch.classes[i])?;
        cls = cls + ce;
        let grow = grad.item_mut(i);
        for (d, gv) in grow[..k].iter_mut().zip(g) {
            *d = alpha * inv_n * gv;
        }
        pred[i * 4 * k..(i + 1) * 4 * k].copy_from_slice(&row[k..5 * k]);
        if let Some(t) = batch.targets[i] {
            let c = batch.classes[i];
            if c >= k - 1 {
                return Err(Error::invalid(format!(
                    "sample {i} has a regression target but background class {c}"
                )));
            }
            for (j, &tv) in t.iter().enumerate() {
                target[i * 4 * k + 4 * c + j] = T::from_f64(tv);
                mask[i * 4 * k + 4 * c + j] = T::one();
            }
        }
    }
    let (reg, reg_grad) = mse_loss(&pred, &target, &mask)?;
    let beta = T::one() - alpha;
    for i in 0..n {
        let grow = grad.item_mut(i);
        for (d, &gv) in grow[k..5 * k].iter_mut().zip(&reg_grad[i * 4 * k..(i + 1) * 4 * k]) {
            *d = beta * gv;
        }
    }

    let lambda = T::from_f64(weights.weight_decay);
    let decay = lambda * model.weight_norm_sq();
    let mut grads = model.backward(trace, grad)?;
    if weights.weight_decay != 0.0 {
        let two_lambda = lambda + lambda;
        for (g, p) in grads.iter_mut().zip(&model.params) {
            for (gv, &w) in g.kernels.data_mut().iter_mut().zip(p.kernels.data()) {
                *gv = *gv + two_lambda * w;
            }
        }
    }

    let cls = cls * inv_n;
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let breakdown = LossBreakdown {
        total: f(alpha * cls + beta * reg + decay),
        cls: f(cls),
        reg: f(reg),
        decay: f(decay),
    };
    Ok((breakdown, grads))
}
