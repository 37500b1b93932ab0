//! Multi-scale proposal generation.
//!
//! The image is rescaled into a pyramid, each level goes through one dense
//! forward pass, every confident response unit becomes a coarse
//! template-sized box at its receptive-field centre, the box is refined by
//! the regression outputs, and the pooled set is thinned by NMS and mapped
//! back to original-image pixels.

mod csv;

pub use self::csv::{read_proposals_csv, write_proposals_csv, ProposalRecord, PROPOSAL_CSV_HEADER};

use log::warn;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::network::{HeadOutput, Model};
use crate::raster::rescale;
use crate::templates::TemplateSet;
use crate::tensor::{softmax, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    /// Softmax probability of `template`.
    pub score: f64,
    /// 0-based template index (never background).
    pub template: usize,
    /// Pyramid scale the proposal was found at.
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidConfig {
    /// Ratio between consecutive scales, in `(0, 1)`.
    pub ratio: f64,
    /// Largest scale; values above 1 upsample to catch small characters.
    pub max_scale: f64,
    /// Smallest scale considered (levels that no longer fit R are dropped anyway).
    pub min_scale: f64,
    /// Units whose template probability is not above this are ignored.
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_proposals: usize,
    /// Cap on candidates entering NMS, taken by score.
    pub pre_nms_limit: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            ratio: 2f64.powf(-0.25),
            max_scale: 1.0,
            min_scale: 0.0,
            score_threshold: 0.5,
            nms_iou: 0.5,
            max_proposals: 1000,
            pre_nms_limit: 20_000,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config(format!(
                "pyramid ratio must lie in (0, 1), got {}",
                self.ratio
            )));
        }
        for (name, v) in [("score threshold", self.score_threshold), ("NMS IoU", self.nms_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.max_scale > 0.0) || self.min_scale < 0.0 || self.min_scale > self.max_scale {
            return Err(Error::Config(
                "pyramid scales must satisfy 0 <= min <= max, max > 0".into(),
            ));
        }
        Ok(())
    }

    /// Scales `max_scale * ratio^i` down to `min_scale`, keeping those at which
    /// an image of `(width, height)` still covers the receptive field.
    pub fn scales(&self, width: usize, height: usize, field: (usize, usize)) -> Vec<f64> {
        let mut out = Vec::new();
        let mut s = self.max_scale;
        while s >= self.min_scale && s > 0.0 {
            let w = (width as f64 * s + 1e-9).floor() as usize;
            let h = (height as f64 * s + 1e-9).floor() as usize;
            if w < field.0 || h < field.1 {
                break;
            }
            out.push(s);
            s *= self.ratio;
        }
        out
    }
}

/// Rescaled copies of `image` with their scale factors, largest first.
pub fn build_pyramid(
    image: &Tensor<f32>,
    field: (usize, usize),
    config: &PyramidConfig,
) -> Result<Vec<(Tensor<f32>, f64)>> {
    config.validate()?;
    let scales = config.scales(image.width(), image.height(), field);
    if scales.is_empty() {
        return Err(Error::invalid(format!(
            "image {}x{} is smaller than the {}x{} receptive field at every scale",
            image.width(),
            image.height(),
            field.0,
            field.1
        )));
    }
    scales.into_iter().map(|s| Ok((rescale(image, s)?, s))).collect()
}

/// A confident response unit before refinement, in scaled-image pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseProposal {
    pub bbox: BBox,
    pub score: f64,
    pub template: usize,
    /// Response-map unit `(row, col)`.
    pub unit: (usize, usize),
    /// Regression outputs of `template` at this unit.
    pub deltas: [f64; 4],
}

/// Receptive-field centre of unit `(row, col)` in pixel-index coordinates:
/// `stride * p + (R - 1) / 2`.
pub fn unit_center(stride: usize, field: (usize, usize), unit: (usize, usize)) -> (f64, f64) {
    let (row, col) = unit;
    (
        (stride * col) as f64 + (field.0 as f64 - 1.0) / 2.0,
        (stride * row) as f64 + (field.1 as f64 - 1.0) / 2.0,
    )
}

/// Coarse box of size `size` centred on a pixel-index centre; the corner is
/// `centre - (size - 1) / 2`.
pub fn coarse_box(center: (f64, f64), size: (f64, f64)) -> BBox {
    BBox::new(
        center.0 - (size.0 - 1.0) / 2.0,
        center.1 - (size.1 - 1.0) / 2.0,
        size.0,
        size.1,
    )
}

/// Every unit/template pair whose probability exceeds `threshold`.
pub fn decode_responses(
    head: &HeadOutput<f32>,
    stride: usize,
    field: (usize, usize),
    templates: &TemplateSet,
    threshold: f64,
) -> Vec<CoarseProposal> {
    let (rows, cols) = head.map_size();
    let mut out = Vec::new();
    for row in 0..rows {
        for col in 0..cols {
            let logits: Vec<f64> = head.logits_at(0, row, col).iter().map(|&v| v as f64).collect();
            let probs = softmax(&logits);
            for (k, &p) in probs.iter().enumerate().take(templates.len()) {
                if p > threshold {
                    let center = unit_center(stride, field, (row, col));
                    let d = head.deltas_at(0, k, row, col);
                    out.push(CoarseProposal {
                        bbox: coarse_box(center, templates.sizes()[k]),
                        score: p,
                        template: k,
                        unit: (row, col),
                        deltas: d.map(|v| v as f64),
                    });
                }
            }
        }
    }
    out
}

/// Applies regression deltas to a source box (inverse of the training encoding).
pub fn decode_regression(t: &[f64; 4], p: &BBox) -> Result<BBox> {
    if !(p.w > 0.0 && p.h > 0.0) {
        return Err(Error::DegenerateBox { w: p.w, h: p.h });
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite regression output {t:?}")));
    }
    let out = BBox::new(p.x + t[0] * p.w, p.y + t[1] * p.h, p.w * t[2].exp(), p.h * t[3].exp());
    if !out.is_valid() {
        return Err(Error::invalid(format!("regression {t:?} overflows box {p:?}")));
    }
    Ok(out)
}

/// Greedy non-maximum suppression.
///
/// Candidates are visited by descending score (ties: earlier input first);
/// one is kept iff its IoU with every already-kept box is at most
/// `iou_threshold`. The result is in visiting order.
pub fn nms(proposals: &[Proposal], iou_threshold: f64) -> Vec<Proposal> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| proposals[b].score.total_cmp(&proposals[a].score).then(a.cmp(&b)));
    let mut kept: Vec<Proposal> = Vec::new();
    for i in order {
        let cand = &proposals[i];
        if kept.iter().all(|k| k.bbox.iou(&cand.bbox) <= iou_threshold) {
            kept.push(*cand);
        }
    }
    kept
}

/// Coarse and refined candidates of one pyramid level, mapped to original pixels.
pub fn level_candidates(model: &Model, level: &Tensor<f32>, scale: f64, score_threshold: f64) -> Result<Vec<Proposal>> {
    let head = model.forward_full(level)?;
    let coarse = decode_responses(
        &head,
        model.stride(),
        model.receptive_field(),
        model.templates(),
        score_threshold,
    );
    let mut out = Vec::with_capacity(coarse.len());
    for c in coarse {
        match decode_regression(&c.deltas, &c.bbox) {
            Ok(refined) => out.push(Proposal {
                bbox: refined.scaled(1.0 / scale),
                score: c.score,
                template: c.template,
                scale,
            }),
            Err(e) => warn!("dropping proposal at unit {:?}: {e}", c.unit),
        }
    }
    Ok(out)
}

/// Full pipeline: pyramid, dense forward, decode, refine, pooled NMS, rank.
pub fn generate_proposals(model: &Model, image: &Tensor<f32>, config: &PyramidConfig) -> Result<Vec<Proposal>> {
    let pyramid = build_pyramid(image, model.receptive_field(), config)?;
    let mut pooled = Vec::new();
    for (level, scale) in &pyramid {
        pooled.extend(level_candidates(model, level, *scale, config.score_threshold)?);
    }
    // stable sort keeps level/unit order among equal scores
    pooled.sort_by(|a, b| b.score.total_cmp(&a.score));
    pooled.truncate(config.pre_nms_limit);
    let mut kept = nms(&pooled, config.nms_iou);
    kept.truncate(config.max_proposals);
    Ok(kept)
}
