//! Aspect-ratio templates.
//!
//! Characters are grouped by width/height ratio into `K - 1` templates; the
//! last class (`K - 1`, 0-based) is background. Each template carries the
//! box size used for coarse proposals at inference time.

use crate::bbox::BBox;
use crate::error::{Error, Result};

/// How a template's box size is derived from its aspect ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TemplateSizing {
    /// Shrink the receptive field along one axis so the box has ratio `a`.
    #[default]
    AspectPreserving,
    /// `(R_w (1 - a) / 2, R_h)` for `a < 1`, `(R_w, R_h (1 - 1/a) / 2)` otherwise.
    Literal,
}

impl TemplateSizing {
    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateSizing::AspectPreserving => "aspect",
            TemplateSizing::Literal => "half-complement",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "aspect" | "aspect-preserving" => Ok(TemplateSizing::AspectPreserving),
            "half-complement" => Ok(TemplateSizing::Literal),
            other => Err(Error::Config(format!("unknown template sizing '{other}'"))),
        }
    }
}

/// Template box size `(w, h)` for aspect ratio `ratio` and receptive field `(R_w, R_h)`.
pub fn template_size(ratio: f64, field: (f64, f64), sizing: TemplateSizing) -> Result<(f64, f64)> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::invalid(format!(
            "template aspect ratio must be positive, got {ratio}"
        )));
    }
    let (rw, rh) = field;
    Ok(match sizing {
        TemplateSizing::AspectPreserving if ratio < 1.0 => (rw * ratio, rh),
        TemplateSizing::AspectPreserving => (rw, rh / ratio),
        TemplateSizing::Literal if ratio < 1.0 => (rw * (1.0 - ratio) / 2.0, rh),
        TemplateSizing::Literal => (rw, rh * (1.0 - 1.0 / ratio) / 2.0),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateSet {
    ratios: Vec<f64>,
    sizes: Vec<(f64, f64)>,
    sizing: TemplateSizing,
}

impl TemplateSet {
    /// Builds a set from aspect ratios (sorted ascending here).
    pub fn new(mut ratios: Vec<f64>, field: (f64, f64), sizing: TemplateSizing) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::invalid("a template set needs at least one aspect ratio"));
        }
        ratios.sort_by(f64::total_cmp);
        let sizes = ratios
            .iter()
            .map(|&a| template_size(a, field, sizing))
            .collect::<Result<_>>()?;
        Ok(TemplateSet { ratios, sizes, sizing })
    }

    /// Restores a set with explicit sizes (used by the model reader).
    pub fn from_parts(ratios: Vec<f64>, sizes: Vec<(f64, f64)>, sizing: TemplateSizing) -> Result<Self> {
        if ratios.is_empty() || ratios.len() != sizes.len() {
            return Err(Error::Format("template ratios and sizes disagree".into()));
        }
        if ratios.windows(2).any(|w| w[0] > w[1]) || ratios.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::Format("template ratios must be positive and ascending".into()));
        }
        Ok(TemplateSet { ratios, sizes, sizing })
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn sizes(&self) -> &[(f64, f64)] {
        &self.sizes
    }

    pub fn sizing(&self) -> TemplateSizing {
        self.sizing
    }

    /// Number of character templates (`K - 1`).
    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }

    /// Total class count `K`, including background.
    pub fn classes(&self) -> usize {
        self.ratios.len() + 1
    }

    pub fn background(&self) -> usize {
        self.ratios.len()
    }

    /// Template whose ratio is nearest in log space.
    pub fn assign(&self, bbox: &BBox) -> usize {
        self.assign_ratio(bbox.aspect())
    }

    pub fn assign_ratio(&self, ratio: f64) -> usize {
        let target = ratio.ln();
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (k, a) in self.ratios.iter().enumerate() {
            let d = (a.ln() - target).abs();
            if d < best_dist {
                best_dist = d;
                best = k;
            }
        }
        best
    }
}

/// One-dimensional k-means on log aspect ratio, returning `classes - 1` templates.
///
/// Centers start at evenly spaced quantiles of the sorted data, so the result
/// is fully determined by the input.
pub fn cluster_templates(
    boxes: &[BBox],
    classes: usize,
    field: (f64, f64),
    sizing: TemplateSizing,
) -> Result<TemplateSet> {
    if classes < 2 {
        return Err(Error::invalid("class count K must be at least 2"));
    }
    let k = classes - 1;
    let mut values: Vec<f64> = boxes
        .iter()
        .filter(|b| b.w > 0.0 && b.h > 0.0)
        .map(|b| b.aspect().ln())
        .collect();
    if values.len() < k {
        return Err(Error::invalid(format!(
            "need at least {k} boxes to cluster {k} templates, got {}",
            values.len()
        )));
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let mut centers: Vec<f64> = (0..k)
        .map(|i| values[(((i as f64 + 0.5) * n as f64 / k as f64) as usize).min(n - 1)])
        .collect();

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..200 {
        let mut changed = false;
        for (v, slot) in values.iter().zip(assignment.iter_mut()) {
            let nearest = centers
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0);
            if *slot != nearest {
                *slot = nearest;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let (sum, count) = values
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
            if count > 0 {
                *center = sum / count as f64;
            }
        }
    }
    TemplateSet::new(centers.into_iter().map(f64::exp).collect(), field, sizing)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIELD: (f64, f64) = (29.0, 29.0);

    fn boxes(ratios: &[f64]) -> Vec<BBox> {
        ratios.iter().map(|&a| BBox::new(0.0, 0.0, 20.0 * a, 20.0)).collect()
    }

    #[test]
    fn sizes_for_both_readings() {
        let s = TemplateSizing::AspectPreserving;
        assert_eq!(template_size(1.0, FIELD, s).unwrap(), (29.0, 29.0));
        assert_eq!(template_size(0.5, FIELD, s).unwrap(), (14.5, 29.0));
        assert_eq!(template_size(2.0, FIELD, s).unwrap(), (29.0, 14.5));
        let l = TemplateSizing::Literal;
        assert_eq!(template_size(0.5, FIELD, l).unwrap(), (7.25, 29.0));
        assert_eq!(template_size(2.0, FIELD, l).unwrap(), (29.0, 7.25));
        assert!(template_size(0.0, FIELD, s).is_err());
        assert!(template_size(-1.0, FIELD, l).is_err());
    }

    #[test]
    fn separated_clusters_are_exact() {
        let set = cluster_templates(&boxes(&[0.5, 0.5, 1.0, 1.0, 2.0, 2.0]), 4, FIELD, Default::default()).unwrap();
        let r = set.ratios();
        assert!((r[0] - 0.5).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12 && (r[2] - 2.0).abs() < 1e-12);
        assert_eq!(set.classes(), 4);
        assert_eq!(set.background(), 3);
    }

    #[test]
    fn single_template() {
        let set = cluster_templates(&boxes(&[0.7; 5]), 2, FIELD, Default::default()).unwrap();
        assert_eq!(set.len(), 1);
        assert!((set.ratios()[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn thin_square_flat_mixture_is_ordered() {
        let mut ratios = Vec::new();
        for i in 0..30 {
            let jitter = 1.0 + 0.1 * ((i % 7) as f64 / 7.0 - 0.5);
            ratios.extend([0.45 * jitter, 1.05 * jitter, 2.2 * jitter]);
        }
        let set = cluster_templates(&boxes(&ratios), 4, FIELD, Default::default()).unwrap();
        let r = set.ratios();
        assert!(r[0] < 0.6 && (0.8..1.3).contains(&r[1]) && r[2] > 1.8, "{r:?}");
    }

    #[test]
    fn too_few_boxes() {
        assert!(cluster_templates(&boxes(&[1.0, 2.0]), 4, FIELD, Default::default()).is_err());
    }

    #[test]
    fn assignment_uses_log_distance() {
        let set = TemplateSet::new(vec![2.0, 0.5, 1.0], FIELD, Default::default()).unwrap();
        assert_eq!(set.ratios(), &[0.5, 1.0, 2.0]);
        assert_eq!(set.assign(&BBox::new(0.0, 0.0, 20.0, 40.0)), 0);
        assert_eq!(set.assign_ratio(1.3), 1);
        assert_eq!(set.assign_ratio(1.5), 2);
    }
}
