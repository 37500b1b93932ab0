//! Sample selection, the multi-task loss, and SGD.

mod loss;
mod samples;
mod sgd;

pub use loss::{joint_loss, Batch, LossBreakdown, LossWeights};
pub use samples::{
    accept_negative, accept_positive, encode_regression, image_rng, sample_negatives, sample_positives,
    samples_for_image, SampleConfig, TrainingSample,
};
pub use sgd::{train, IterationLog, LearningRate, TrainConfig};

use crate::bbox::BBox;
use crate::error::Result;
use crate::templates::TemplateSet;
use crate::tensor::Tensor;

/// Samples for a whole dataset; image `i` draws from its own seeded stream,
/// so the result does not depend on processing order.
pub fn build_training_set<'a>(
    images: impl IntoIterator<Item = (&'a Tensor<f32>, &'a [BBox])>,
    templates: &TemplateSet,
    field: (usize, usize),
    config: &SampleConfig,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for (i, (image, truths)) in images.into_iter().enumerate() {
        let mut rng = image_rng(seed, i);
        out.extend(samples_for_image(image, truths, templates, field, config, &mut rng)?);
    }
    Ok(out)
}
