use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::raster::resample_region;
use crate::templates::TemplateSet;
use crate::tensor::Tensor;

/// Regression targets `(t_x, t_y, t_w, t_h)` taking source box `p` to truth `g`.
pub fn encode_regression(p: &BBox, g: &BBox) -> Result<[f64; 4]> {
    for b in [p, g] {
        if !(b.w > 0.0 && b.h > 0.0) {
            return Err(Error::DegenerateBox { w: b.w, h: b.h });
        }
    }
    Ok([(g.x - p.x) / p.w, (g.y - p.y) / p.h, (g.w / p.w).ln(), (g.h / p.h).ln()])
}

/// One labelled, receptive-field-sized training patch.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    /// `(1, 3, R_h, R_w)`.
    pub patch: Tensor<f32>,
    /// 0-based class; `K - 1` is background.
    pub class: usize,
    /// Present exactly for character samples.
    pub target: Option<[f64; 4]>,
    /// Region of the image that was resampled into `patch`.
    pub crop: BBox,
    /// Regression source: the class template's box centred in the crop.
    pub source: BBox,
    pub truth: Option<BBox>,
}

impl TrainingSample {
    pub fn is_background(&self) -> bool {
        self.target.is_none()
    }
}

/// Sample selection settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleConfig {
    /// Jittered copies per truth box, in addition to the unshifted crop.
    pub shift_count: usize,
    /// Largest jitter (position and size) as a fraction of the box size.
    pub max_offset: f64,
    /// Jittered crops must overlap the expanded truth by more than this.
    pub positive_iou: f64,
    /// Negatives must overlap every positive crop by less than this.
    pub negative_iou: f64,
    /// Negatives may not have more than this fraction of their area inside a truth box.
    pub negative_max_coverage: f64,
    pub negatives_per_image: usize,
    /// Negative crop side range in pixels; the upper bound is also capped by the image.
    pub negative_min_side: f64,
    pub negative_max_side: f64,
    /// Placement attempts per requested negative.
    pub negative_retries: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            shift_count: 4,
            max_offset: 0.1,
            positive_iou: 0.85,
            negative_iou: 0.1,
            negative_max_coverage: 0.7,
            negatives_per_image: 24,
            negative_min_side: 8.0,
            negative_max_side: 256.0,
            negative_retries: 50,
        }
    }
}

/// Whether a jittered crop still counts as a positive for its expanded truth.
pub fn accept_positive(crop: &BBox, expanded_truth: &BBox, threshold: f64) -> bool {
    crop.iou(expanded_truth) > threshold
}

fn positive_sample(
    image: &Tensor<f32>,
    crop: BBox,
    truth: BBox,
    class: usize,
    templates: &TemplateSet,
    field: (usize, usize),
) -> Result<TrainingSample> {
    let (rw, rh) = field;
    let patch = resample_region(image, &crop, rw, rh)?;
    let scale = crop.w / rw as f64;
    let (mw, mh) = templates.sizes()[class];
    let (cx, cy) = crop.center();
    let source = BBox::from_center(cx, cy, mw * scale, mh * scale);
    let target = encode_regression(&source, &truth)?;
    Ok(TrainingSample {
        patch,
        class,
        target: Some(target),
        crop,
        source,
        truth: Some(truth),
    })
}

/// Positive samples: the aspect-expanded truth crop plus jittered copies.
///
/// The shorter side of each truth is grown symmetrically until the box has
/// the receptive field's aspect ratio; jitter shifts the centre and scales
/// the size by up to `max_offset` of the box size.
pub fn sample_positives<R: Rng>(
    image: &Tensor<f32>,
    truths: &[BBox],
    templates: &TemplateSet,
    field: (usize, usize),
    config: &SampleConfig,
    rng: &mut R,
) -> Result<Vec<TrainingSample>> {
    if truths.is_empty() {
        return Err(Error::invalid("positive sampling needs at least one truth box"));
    }
    let aspect = field.0 as f64 / field.1 as f64;
    let mut out = Vec::with_capacity(truths.len() * (config.shift_count + 1));
    for truth in truths {
        if !(truth.w > 0.0 && truth.h > 0.0) {
            warn!("skipping degenerate truth box {truth:?}");
            continue;
        }
        let class = templates.assign(truth);
        let expanded = truth.expand_to_aspect(aspect);
        out.push(positive_sample(image, expanded, *truth, class, templates, field)?);

        let (cx, cy) = expanded.center();
        let m = config.max_offset;
        for _ in 0..config.shift_count {
            let (dx, dy, ds) = if m > 0.0 {
                (
                    rng.random_range(-m..=m),
                    rng.random_range(-m..=m),
                    rng.random_range(-m..=m),
                )
            } else {
                (0.0, 0.0, 0.0)
            };
            let crop = BBox::from_center(
                cx + dx * expanded.w,
                cy + dy * expanded.h,
                expanded.w * (1.0 + ds),
                expanded.h * (1.0 + ds),
            );
            if accept_positive(&crop, &expanded, config.positive_iou) {
                out.push(positive_sample(image, crop, *truth, class, templates, field)?);
            }
        }
    }
    Ok(out)
}

/// Whether a candidate crop qualifies as background.
pub fn accept_negative(crop: &BBox, positives: &[BBox], truths: &[BBox], config: &SampleConfig) -> bool {
    positives.iter().all(|p| crop.iou(p) < config.negative_iou)
        && truths
            .iter()
            .all(|t| crop.intersection_area(t) <= config.negative_max_coverage * crop.area())
}

/// Random background crops that avoid every positive crop.
///
/// Returns fewer than `count` samples (with a warning) when placement keeps
/// failing.
#[allow(clippy::too_many_arguments)]
pub fn sample_negatives<R: Rng>(
    image: &Tensor<f32>,
    truths: &[BBox],
    positives: &[BBox],
    count: usize,
    background: usize,
    field: (usize, usize),
    config: &SampleConfig,
    rng: &mut R,
) -> Result<Vec<TrainingSample>> {
    let (rw, rh) = field;
    let aspect = rw as f64 / rh as f64;
    let (iw, ih) = (image.width() as f64, image.height() as f64);
    let max_side = config.negative_max_side.min(ih).min(iw / aspect);
    let min_side = config.negative_min_side.max(1.0);
    if max_side < min_side {
        return Err(Error::invalid(format!(
            "image {iw}x{ih} is smaller than the minimal negative crop"
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < count * config.negative_retries.max(1) {
        attempts += 1;
        // log-uniform side so small and large crops are equally represented
        let side = (rng.random_range(min_side.ln()..=max_side.ln())).exp();
        let (cw, ch) = (side * aspect, side);
        let crop = BBox::new(
            rng.random_range(0.0..=(iw - cw).max(0.0)),
            rng.random_range(0.0..=(ih - ch).max(0.0)),
            cw,
            ch,
        );
        if !accept_negative(&crop, positives, truths, config) {
            continue;
        }
        let patch = resample_region(image, &crop, rw, rh)?;
        out.push(TrainingSample {
            patch,
            class: background,
            target: None,
            crop,
            source: crop,
            truth: None,
        });
    }
    if out.len() < count {
        warn!("placed only {} of {count} negatives", out.len());
    }
    Ok(out)
}

/// Deterministic per-image stream derived from a run seed.
pub fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Positives and negatives for one annotated image.
pub fn samples_for_image(
    image: &Tensor<f32>,
    truths: &[BBox],
    templates: &TemplateSet,
    field: (usize, usize),
    config: &SampleConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainingSample>> {
    let valid: Vec<BBox> = truths.iter().copied().filter(|b| b.w > 0.0 && b.h > 0.0).collect();
    let mut samples = if valid.is_empty() {
        Vec::new()
    } else {
        sample_positives(image, &valid, templates, field, config, rng)?
    };
    let positive_crops: Vec<BBox> = samples.iter().map(|s| s.crop).collect();
    samples.extend(sample_negatives(
        image,
        &valid,
        &positive_crops,
        config.negatives_per_image,
        templates.background(),
        field,
        config,
        rng,
    )?);
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn templates() -> TemplateSet {
        TemplateSet::new(vec![0.5, 1.0, 2.0], (29.0, 29.0), Default::default()).unwrap()
    }

    #[test]
    fn encode_cases() {
        let p = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(encode_regression(&p, &p).unwrap(), [0.0; 4]);
        let t = encode_regression(&p, &BBox::new(1.0, 2.0, 10.0, 10.0)).unwrap();
        assert!((t[0] - 0.1).abs() < 1e-12 && (t[1] - 0.2).abs() < 1e-12 && t[2] == 0.0 && t[3] == 0.0);
        let t = encode_regression(&p, &BBox::new(0.0, 0.0, 20.0, 10.0)).unwrap();
        assert!((t[2] - 2f64.ln()).abs() < 1e-12 && t[0] == 0.0 && t[3] == 0.0);
        assert!(encode_regression(&BBox::new(0.0, 0.0, 0.0, 1.0), &p).is_err());
    }

    #[test]
    fn square_truth_without_shift_is_identity() {
        let image = Tensor::zeros([1, 3, 64, 64]);
        let truth = BBox::new(10.0, 12.0, 20.0, 20.0);
        let config = SampleConfig {
            shift_count: 0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_positives(&image, &[truth], &templates(), (29, 29), &config, &mut rng).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].crop, truth);
        assert_eq!(s[0].class, 1);
        for v in s[0].target.unwrap() {
            assert!(v.abs() < 1e-12);
        }
        assert_eq!(s[0].patch.dims(), [1, 3, 29, 29]);
    }

    #[test]
    fn thin_truth_gets_thin_template() {
        let image = Tensor::zeros([1, 3, 64, 64]);
        let truth = BBox::new(20.0, 10.0, 20.0, 40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = sample_positives(&image, &[truth], &templates(), (29, 29), &Default::default(), &mut rng).unwrap();
        assert!(s.iter().all(|x| x.class == 0));
        // the thin template box already matches the truth when unshifted
        assert!(s[0].target.unwrap().iter().all(|v| v.abs() < 1e-9));
        for x in &s {
            assert!(x.crop.iou(&truth.expand_to_aspect(1.0)) > 0.85);
        }
    }

    #[test]
    fn positive_iou_rule() {
        let e = BBox::new(0.0, 0.0, 100.0, 100.0);
        // IoU = 84 / 100
        assert!(!accept_positive(&BBox::new(0.0, 0.0, 84.0, 100.0), &e, 0.85));
        assert!(accept_positive(&BBox::new(0.0, 0.0, 86.0, 100.0), &e, 0.85));
    }

    #[test]
    fn negative_iou_rule() {
        let config = SampleConfig::default();
        let pos = [BBox::new(0.0, 0.0, 10.0, 10.0)];
        // IoU 15 / 100 against the positive
        let crop = BBox::new(0.0, 8.5, 10.0, 10.0);
        assert!((crop.iou(&pos[0]) - 15.0 / 185.0).abs() < 1e-12);
        let crop = BBox::new(0.0, 0.0, 10.0, 1.5);
        assert!((crop.iou(&pos[0]) - 0.15).abs() < 1e-12);
        assert!(!accept_negative(&crop, &pos, &[], &config));
        assert!(accept_negative(&BBox::new(50.0, 50.0, 10.0, 10.0), &pos, &[], &config));
    }

    #[test]
    fn negatives_avoid_positives() {
        let image = Tensor::zeros([1, 3, 120, 120]);
        let truths = [BBox::new(10.0, 10.0, 30.0, 30.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = samples_for_image(&image, &truths, &templates(), (29, 29), &Default::default(), &mut rng).unwrap();
        let positives: Vec<BBox> = s.iter().filter(|x| !x.is_background()).map(|x| x.crop).collect();
        let negatives: Vec<&TrainingSample> = s.iter().filter(|x| x.is_background()).collect();
        assert!(!negatives.is_empty());
        for n in negatives {
            assert_eq!(n.class, 3);
            assert!(positives.iter().all(|p| n.crop.iou(p) < 0.1));
        }
    }

    #[test]
    fn fully_covered_image_has_no_negatives() {
        let image = Tensor::zeros([1, 3, 40, 40]);
        let truth = [BBox::new(0.0, 0.0, 40.0, 40.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = sample_negatives(&image, &truth, &truth, 5, 3, (29, 29), &Default::default(), &mut rng).unwrap();
        assert!(n.is_empty());
    }
}
