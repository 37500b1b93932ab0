//! Recall of character proposals against ground truth.
//!
//! A truth box counts as found when at least one of the image's `top_n`
//! highest-scoring proposals overlaps it with IoU strictly above the
//! threshold. Matching is existential: one proposal may cover several
//! truths and duplicates change nothing.

use std::collections::BTreeMap;
use std::io::Write;

pub use crate::bbox::iou;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::inference::{Proposal, ProposalRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct TruthBox {
    pub bbox: BBox,
    pub label: Option<String>,
}

/// Truth boxes per image id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub images: BTreeMap<String, Vec<TruthBox>>,
}

impl GroundTruth {
    pub fn insert(&mut self, image_id: impl Into<String>, bbox: BBox, label: Option<String>) {
        self.images
            .entry(image_id.into())
            .or_default()
            .push(TruthBox { bbox, label });
    }

    pub fn total(&self) -> usize {
        self.images.values().map(Vec::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub recall: f64,
    pub matched: usize,
    pub total: usize,
    pub iou_threshold: f64,
    pub top_n: Option<usize>,
}

/// Groups proposal records per image, sorted by descending score (stable).
pub fn group_proposals(records: &[ProposalRecord]) -> BTreeMap<String, Vec<Proposal>> {
    let mut map: BTreeMap<String, Vec<Proposal>> = BTreeMap::new();
    for r in records {
        map.entry(r.image_id.clone()).or_default().push(r.proposal);
    }
    for list in map.values_mut() {
        list.sort_by(|a, b| b.score.total_cmp(&a.score));
    }
    map
}

fn check_inputs(proposals: &BTreeMap<String, Vec<Proposal>>, truths: &GroundTruth) -> Result<usize> {
    if let Some(unknown) = proposals.keys().find(|id| !truths.images.contains_key(*id)) {
        return Err(Error::invalid(format!("proposals reference unknown image '{unknown}'")));
    }
    let total = truths.total();
    if total == 0 {
        return Err(Error::EmptyGroundTruth("no truth boxes".into()));
    }
    for (id, boxes) in &truths.images {
        if let Some(b) = boxes.iter().find(|b| !(b.bbox.w > 0.0 && b.bbox.h > 0.0)) {
            return Err(Error::invalid(format!("degenerate truth {:?} in '{id}'", b.bbox)));
        }
    }
    Ok(total)
}

/// Recall over all images at one IoU threshold and proposal budget.
///
/// `proposals` lists must already be ranked by descending score (see
/// [`group_proposals`]); `top_n = None` uses every proposal.
pub fn recall(
    proposals: &BTreeMap<String, Vec<Proposal>>,
    truths: &GroundTruth,
    iou_threshold: f64,
    top_n: Option<usize>,
) -> Result<EvalResult> {
    let total = check_inputs(proposals, truths)?;
    let mut matched = 0;
    for (id, boxes) in &truths.images {
        let Some(list) = proposals.get(id) else { continue };
        let ranked = &list[..top_n.map_or(list.len(), |n| n.min(list.len()))];
        matched += boxes
            .iter()
            .filter(|t| ranked.iter().any(|p| p.bbox.iou(&t.bbox) > iou_threshold))
            .count();
    }
    Ok(EvalResult {
        recall: matched as f64 / total as f64,
        matched,
        total,
        iou_threshold,
        top_n,
    })
}

/// Sweep settings for the two curve families.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveConfig {
    pub top_n_grid: Vec<usize>,
    pub fixed_iou: f64,
    pub iou_grid: Vec<f64>,
    pub fixed_top_n: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig {
            top_n_grid: vec![1, 2, 5, 10, 20, 50, 100, 200, 300, 500, 700, 1000, 2000],
            fixed_iou: 0.5,
            iou_grid: (0..=8).map(|i| 0.5 + 0.05 * i as f64).collect(),
            fixed_top_n: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    /// `"proposals"` or `"iou"`.
    pub axis: &'static str,
    pub value: f64,
    pub recall: f64,
}

/// Recall vs. proposal count (at `fixed_iou`) and recall vs. IoU (at `fixed_top_n`).
pub fn recall_curves(
    proposals: &BTreeMap<String, Vec<Proposal>>,
    truths: &GroundTruth,
    config: &CurveConfig,
) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for &n in &config.top_n_grid {
        out.push(CurvePoint {
            axis: "proposals",
            value: n as f64,
            recall: recall(proposals, truths, config.fixed_iou, Some(n))?.recall,
        });
    }
    for &t in &config.iou_grid {
        out.push(CurvePoint {
            axis: "iou",
            value: t,
            recall: recall(proposals, truths, t, Some(config.fixed_top_n))?.recall,
        });
    }
    Ok(out)
}

pub fn write_curves_csv(mut w: impl Write, points: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(w, "axis,value,recall")?;
    for p in points {
        writeln!(w, "{},{},{:.6}", p.axis, p.value, p.recall)?;
    }
    Ok(())
}
