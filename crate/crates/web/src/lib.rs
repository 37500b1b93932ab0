//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three views: a synthetic scene with proposals from an uploaded model
//! file, an NMS playground on random boxes, and the layer-by-layer geometry
//! of the built-in architectures. The logic lives in plain Rust functions
//! so it can be tested natively; the `#[wasm_bindgen]` items only convert
//! errors and flatten results into numeric arrays.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use charprop::evaluation::{recall, GroundTruth};
use charprop::inference::{generate_proposals, nms, Proposal, PyramidConfig};
use charprop::network::{builtin_spec, validate_geometry, Model, BUILTIN_NAMES};
use charprop::raster::rgb_to_tensor;
use charprop::synth::{synth_scene, Scene, SynthConfig};
use charprop::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Scene, model and latest proposals of the scene view.
#[derive(Default)]
pub struct DemoState {
    scene: Option<Scene>,
    model: Option<Model>,
    proposals: Vec<Proposal>,
}

impl DemoState {
    pub fn generate_scene(&mut self, seed: u64, index: usize) -> Result<(), String> {
        let config = SynthConfig {
            seed,
            ..Default::default()
        };
        self.scene = Some(synth_scene(&config, index).map_err(|e| e.to_string())?);
        self.proposals.clear();
        Ok(())
    }

    pub fn scene(&self) -> Option<&Scene> {
        self.scene.as_ref()
    }

    /// Loads a model file and returns a short description.
    pub fn load_model(&mut self, bytes: &[u8]) -> Result<String, String> {
        let model = Model::from_bytes(bytes).map_err(|e| e.to_string())?;
        let (rw, rh) = model.receptive_field();
        let summary = format!(
            "{}: K = {}, receptive field {rw}x{rh}, stride {}, {} parameters",
            model.spec().name,
            model.classes(),
            model.stride(),
            model.parameter_count()
        );
        self.model = Some(model);
        Ok(summary)
    }

    pub fn propose(&mut self, config: &PyramidConfig) -> Result<&[Proposal], String> {
        let scene = self.scene.as_ref().ok_or("generate a scene first")?;
        let model = self.model.as_ref().ok_or("load a model file first")?;
        let image = rgb_to_tensor(&scene.image);
        self.proposals = generate_proposals(model, &image, config).map_err(|e| e.to_string())?;
        Ok(&self.proposals)
    }

    /// Recall of the latest proposals on the current scene.
    pub fn recall(&self, iou_threshold: f64, top_n: usize) -> Result<f64, String> {
        let scene = self.scene.as_ref().ok_or("generate a scene first")?;
        let mut truths = GroundTruth::default();
        for b in scene.bboxes() {
            truths.insert("scene", b, None);
        }
        let mut proposals = BTreeMap::new();
        proposals.insert("scene".to_string(), self.proposals.clone());
        recall(&proposals, &truths, iou_threshold, Some(top_n))
            .map(|r| r.recall)
            .map_err(|e| e.to_string())
    }
}

/// Random proposal clusters on a `width` x `height` canvas, each flagged with
/// whether greedy NMS keeps it. Output is in descending score order.
pub fn nms_playground(seed: u64, count: usize, iou_threshold: f64, width: f64, height: f64) -> Vec<(Proposal, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = (count / 6).max(1);
    let centers: Vec<(f64, f64, f64, f64)> = (0..clusters)
        .map(|_| {
            let w = rng.random_range(20.0..70.0);
            let h = rng.random_range(20.0..70.0);
            (
                rng.random_range(0.0..width - w),
                rng.random_range(0.0..height - h),
                w,
                h,
            )
        })
        .collect();
    let mut boxes: Vec<Proposal> = (0..count)
        .map(|i| {
            let (x, y, w, h) = centers[i % clusters];
            let j = |rng: &mut ChaCha8Rng, s: f64| rng.random_range(-0.25..0.25) * s;
            Proposal {
                bbox: BBox::new(
                    x + j(&mut rng, w),
                    y + j(&mut rng, h),
                    w * (1.0 + j(&mut rng, 1.0)),
                    h * (1.0 + j(&mut rng, 1.0)),
                ),
                score: rng.random_range(0.0..1.0),
                template: 0,
                scale: 1.0,
            }
        })
        .collect();
    boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
    let kept = nms(&boxes, iou_threshold);
    let mut k = 0;
    boxes
        .into_iter()
        .map(|p| {
            let keep = k < kept.len() && kept[k] == p;
            if keep {
                k += 1;
            }
            (p, keep)
        })
        .collect()
}

/// Layer table and receptive-field trace of a built-in architecture.
pub fn geometry_report(arch: &str, classes: usize) -> Result<String, String> {
    let spec = builtin_spec(arch, classes).map_err(|e| e.to_string())?;
    let geometry = validate_geometry(&spec).map_err(|e| e.to_string())?;
    let (rw, rh) = geometry.receptive_field;
    let trace = geometry.trace(rh).ok_or("receptive field does not reduce")?;
    let mut out = String::new();
    let _ = writeln!(out, "{}", spec.describe());
    let _ = writeln!(out, "receptive field {rw}x{rh}, stride {}", geometry.stride);
    let _ = writeln!(out, "{:<10} {:>6}", "input", trace[0]);
    for (layer, extent) in spec.layers.iter().zip(&trace[1..]) {
        let _ = writeln!(out, "{:<10} {:>6}", layer.to_string(), extent);
    }
    let (h, w) = geometry.output_size(120, 160).unwrap_or((0, 0));
    let _ = writeln!(out, "a 160x120 image gives a {w}x{h} response map");
    Ok(out)
}

fn js_err(e: String) -> JsError {
    JsError::new(&e)
}

fn flatten(proposals: &[Proposal]) -> Vec<f64> {
    proposals
        .iter()
        .flat_map(|p| [p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h, p.score, (p.template + 1) as f64])
        .collect()
}

#[wasm_bindgen]
#[derive(Default)]
pub struct Demo {
    state: DemoState,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        Demo::default()
    }

    pub fn generate_scene(&mut self, seed: u32, index: u32) -> Result<(), JsError> {
        self.state.generate_scene(seed as u64, index as usize).map_err(js_err)
    }

    pub fn width(&self) -> u32 {
        self.state.scene().map_or(0, |s| s.image.width())
    }

    pub fn height(&self) -> u32 {
        self.state.scene().map_or(0, |s| s.image.height())
    }

    /// RGBA bytes of the current scene, for `ImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        self.state
            .scene()
            .map(|s| s.image.pixels().flat_map(|p| [p.0[0], p.0[1], p.0[2], 255]).collect())
            .unwrap_or_default()
    }

    /// Truth boxes as `[x, y, w, h, ...]`.
    pub fn truth_boxes(&self) -> Vec<f64> {
        self.state
            .scene()
            .map(|s| {
                s.glyphs
                    .iter()
                    .flat_map(|g| [g.bbox.x, g.bbox.y, g.bbox.w, g.bbox.h])
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn load_model(&mut self, bytes: &[u8]) -> Result<String, JsError> {
        self.state.load_model(bytes).map_err(js_err)
    }

    /// Proposals as `[x, y, w, h, score, template, ...]`, best first.
    pub fn propose(
        &mut self,
        max_scale: f64,
        min_scale: f64,
        score_threshold: f64,
        nms_iou: f64,
        max_proposals: u32,
    ) -> Result<Vec<f64>, JsError> {
        let config = PyramidConfig {
            max_scale,
            min_scale,
            score_threshold,
            nms_iou,
            max_proposals: max_proposals as usize,
            ..Default::default()
        };
        self.state.propose(&config).map(flatten).map_err(js_err)
    }

    pub fn recall(&self, iou_threshold: f64, top_n: u32) -> Result<f64, JsError> {
        self.state.recall(iou_threshold, top_n as usize).map_err(js_err)
    }
}

/// `[x, y, w, h, score, kept, ...]` for the NMS view.
#[wasm_bindgen]
pub fn nms_demo(seed: u32, count: u32, iou_threshold: f64, width: f64, height: f64) -> Vec<f64> {
    nms_playground(seed as u64, count as usize, iou_threshold, width, height)
        .into_iter()
        .flat_map(|(p, keep)| [p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h, p.score, keep as u8 as f64])
        .collect()
}

#[wasm_bindgen]
pub fn geometry(arch: &str, classes: u32) -> Result<String, JsError> {
    geometry_report(arch, classes as usize).map_err(js_err)
}

#[wasm_bindgen]
pub fn architectures() -> Vec<String> {
    BUILTIN_NAMES.iter().map(|s| s.to_string()).collect()
}
