use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{joint_loss, Batch, LossBreakdown, LossWeights};
use super::samples::{SampleConfig, TrainingSample};
use crate::error::{Error, Result};
use crate::network::Model;

/// Learning-rate schedule: `rate * gamma^(t / step)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRate {
    pub initial: f64,
    /// Iterations between decays; `None` keeps the rate constant.
    pub step: Option<usize>,
    pub gamma: f64,
}

impl LearningRate {
    pub fn constant(rate: f64) -> Self {
        LearningRate {
            initial: rate,
            step: None,
            gamma: 1.0,
        }
    }

    /// Rate for 1-based iteration `t`.
    pub fn at(&self, t: usize) -> f64 {
        match self.step {
            Some(step) if step > 0 => self.initial * self.gamma.powi(((t - 1) / step) as i32),
            _ => self.initial,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: LearningRate,
    pub loss: LossWeights,
    pub iterations: usize,
    pub sampling: SampleConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 100,
            learning_rate: LearningRate::constant(0.001),
            loss: LossWeights::default(),
            iterations: 10_000,
            sampling: SampleConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = self.loss.alpha;
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {a}")));
        }
        if !(self.loss.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.initial >= 0.0) {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        Ok(())
    }

    /// Settings as `key = value` pairs, for echoing into outputs and model files.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let lr = &self.learning_rate;
        let s = &self.sampling;
        vec![
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr".into(), lr.initial.to_string()),
            ("lr_step".into(), lr.step.map_or("none".into(), |v| v.to_string())),
            ("lr_gamma".into(), lr.gamma.to_string()),
            ("alpha".into(), self.loss.alpha.to_string()),
            ("weight_decay".into(), self.loss.weight_decay.to_string()),
            ("iterations".into(), self.iterations.to_string()),
            ("shift_count".into(), s.shift_count.to_string()),
            ("max_offset".into(), s.max_offset.to_string()),
            ("negatives_per_image".into(), s.negatives_per_image.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub loss: LossBreakdown,
}

impl IterationLog {
    pub const CSV_HEADER: &'static str = "iter,loss_total,loss_cls,loss_reg";

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6}",
            self.iteration, self.loss.total, self.loss.cls, self.loss.reg
        )
    }
}

/// Plain minibatch SGD.
///
/// Every iteration draws the next `batch_size` samples of a seeded shuffle
/// (reshuffled each epoch), computes the batch gradient of the joint loss
/// and steps `W -= rate * grad`. The run is a pure function of the initial
/// model, the samples and the config.
pub fn train(
    mut model: Model,
    samples: &[TrainingSample],
    config: &TrainConfig,
    mut on_iteration: impl FnMut(&IterationLog),
) -> Result<(Model, Vec<IterationLog>)> {
    config.validate()?;
    let background = model.templates().background();
    let positives = samples.iter().filter(|s| s.class != background).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::invalid("training needs both character and background samples"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let batch_size = config.batch_size.min(samples.len());
    let mut curve = Vec::with_capacity(config.iterations);

    for t in 1..=config.iterations {
        let mut picked = Vec::with_capacity(batch_size);
        while picked.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(&samples[order[cursor]]);
            cursor += 1;
        }
        let batch = Batch::from_samples(&picked)?;
        let (loss, grads) = joint_loss(&model, &batch, config.loss)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                iteration: t,
                loss: loss.total,
            });
        }
        let rate = config.learning_rate.at(t);
        if rate != 0.0 {
            model.apply_update(&grads, rate as f32);
        }
        let entry = IterationLog { iteration: t, loss };
        on_iteration(&entry);
        curve.push(entry);
    }

    for (k, v) in config.to_pairs() {
        model.metadata.insert(format!("train.{k}"), v);
    }
    Ok((model, curve))
}
