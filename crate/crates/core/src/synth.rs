//! Procedural glyph scenes for training and evaluating at desk scale.
//!
//! Glyphs are stroke figures (bars, boxes, L/T/H/U/E shapes) whose strokes
//! reach all four sides of the glyph box, so the annotation is the tight
//! bound. Scenes can include touching glyph pairs, glyphs split into
//! separate parts, textured backgrounds and illumination gradients.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::annotations::{format_annotations, save_png, AnnotationEntry};
use crate::bbox::BBox;
use crate::config::{format_pairs, ConfigFile};
use crate::error::{Error, Result};
use crate::training::image_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub width: (u32, u32),
    pub height: (u32, u32),
    pub glyphs: (usize, usize),
    /// Glyph height range in pixels (log-uniform).
    pub glyph_height: (f64, f64),
    /// `(aspect ratio, weight)` mixture for glyph width/height.
    pub aspect_mixture: Vec<(f64, f64)>,
    /// Standard deviation of the log-normal jitter applied to the sampled ratio.
    pub aspect_jitter: f64,
    pub texture: bool,
    pub illumination: bool,
    /// Probability that a glyph gets an abutting neighbour.
    pub touching_pairs: f64,
    /// Probability that a glyph is cut into separate parts.
    pub broken_glyphs: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            width: (112, 160),
            height: (112, 160),
            glyphs: (3, 7),
            glyph_height: (18.0, 40.0),
            aspect_mixture: vec![(0.5, 1.0 / 3.0), (1.0, 1.0 / 3.0), (2.0, 1.0 / 3.0)],
            aspect_jitter: 0.08,
            texture: true,
            illumination: true,
            touching_pairs: 0.15,
            broken_glyphs: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width.0 == 0 || self.width.0 > self.width.1 || self.height.0 == 0 || self.height.0 > self.height.1 {
            return bad("image size ranges must be non-empty and positive");
        }
        if self.glyphs.0 > self.glyphs.1 {
            return bad("glyph count range is empty");
        }
        if !(self.glyph_height.0 >= 4.0 && self.glyph_height.0 <= self.glyph_height.1) {
            return bad("glyph heights must be at least 4 px and ordered");
        }
        if self.aspect_mixture.is_empty() || self.aspect_mixture.iter().any(|&(a, w)| !(a > 0.0) || !(w > 0.0)) {
            return bad("aspect mixture needs positive ratios and weights");
        }
        for p in [self.touching_pairs, self.broken_glyphs] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        Ok(())
    }

    /// Settings as flat `key = value` pairs (the keys [`SynthConfig::apply`] reads).
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("seed".into(), self.seed.to_string()),
            ("min_width".into(), self.width.0.to_string()),
            ("max_width".into(), self.width.1.to_string()),
            ("min_height".into(), self.height.0.to_string()),
            ("max_height".into(), self.height.1.to_string()),
            ("min_glyphs".into(), self.glyphs.0.to_string()),
            ("max_glyphs".into(), self.glyphs.1.to_string()),
            ("min_glyph_height".into(), self.glyph_height.0.to_string()),
            ("max_glyph_height".into(), self.glyph_height.1.to_string()),
            ("aspect_mixture".into(), format_mixture(&self.aspect_mixture)),
            ("aspect_jitter".into(), self.aspect_jitter.to_string()),
            ("texture".into(), self.texture.to_string()),
            ("illumination".into(), self.illumination.to_string()),
            ("touching_pairs".into(), self.touching_pairs.to_string()),
            ("broken_glyphs".into(), self.broken_glyphs.to_string()),
        ]
    }

    pub const KEYS: [&'static str; 15] = [
        "seed",
        "min_width",
        "max_width",
        "min_height",
        "max_height",
        "min_glyphs",
        "max_glyphs",
        "min_glyph_height",
        "max_glyph_height",
        "aspect_mixture",
        "aspect_jitter",
        "texture",
        "illumination",
        "touching_pairs",
        "broken_glyphs",
    ];

    /// Overrides every field present in `file`.
    pub fn apply(&mut self, file: &ConfigFile) -> Result<()> {
        fn set<T: std::str::FromStr>(slot: &mut T, file: &ConfigFile, key: &str) -> Result<()> {
            if let Some(v) = file.get(key)? {
                *slot = v;
            }
            Ok(())
        }
        set(&mut self.seed, file, "seed")?;
        set(&mut self.width.0, file, "min_width")?;
        set(&mut self.width.1, file, "max_width")?;
        set(&mut self.height.0, file, "min_height")?;
        set(&mut self.height.1, file, "max_height")?;
        set(&mut self.glyphs.0, file, "min_glyphs")?;
        set(&mut self.glyphs.1, file, "max_glyphs")?;
        set(&mut self.glyph_height.0, file, "min_glyph_height")?;
        set(&mut self.glyph_height.1, file, "max_glyph_height")?;
        if let Some(m) = file.get_str("aspect_mixture") {
            self.aspect_mixture = parse_mixture(m)?;
        }
        set(&mut self.aspect_jitter, file, "aspect_jitter")?;
        set(&mut self.texture, file, "texture")?;
        set(&mut self.illumination, file, "illumination")?;
        set(&mut self.touching_pairs, file, "touching_pairs")?;
        set(&mut self.broken_glyphs, file, "broken_glyphs")?;
        Ok(())
    }
}

/// `ratio:weight` pairs separated by commas, e.g. `0.5:1,1:1,2:1`.
pub fn parse_mixture(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|part| {
            let (a, w) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("mixture entry '{part}' is not ratio:weight")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("mixture entry '{part}' is not numeric")))
            };
            Ok((num(a)?, num(w)?))
        })
        .collect()
}

pub fn format_mixture(mixture: &[(f64, f64)]) -> String {
    let parts: Vec<String> = mixture.iter().map(|(a, w)| format!("{a}:{w}")).collect();
    parts.join(",")
}

/// Stroke layouts; every one touches all four sides of its box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Block,
    Frame,
    H,
    L,
    T,
    U,
    E,
    Cross,
    IBeam,
}

const SHAPES: [Shape; 9] = [
    Shape::Block,
    Shape::Frame,
    Shape::H,
    Shape::L,
    Shape::T,
    Shape::U,
    Shape::E,
    Shape::Cross,
    Shape::IBeam,
];

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Block => "block",
            Shape::Frame => "frame",
            Shape::H => "H",
            Shape::L => "L",
            Shape::T => "T",
            Shape::U => "U",
            Shape::E => "E",
            Shape::Cross => "cross",
            Shape::IBeam => "ibeam",
        }
    }

    /// Stroke rectangles `(x, y, w, h)` in pixels relative to the glyph box.
    fn strokes(&self, w: u32, h: u32, t: u32) -> Vec<(u32, u32, u32, u32)> {
        let tw = t.min(w);
        let th = t.min(h);
        let left = (0, 0, tw, h);
        let right = (w - tw, 0, tw, h);
        let top = (0, 0, w, th);
        let bottom = (0, h - th, w, th);
        let mid_h = (0, (h - th) / 2, w, th);
        let mid_v = ((w - tw) / 2, 0, tw, h);
        match self {
            Shape::Block => vec![(0, 0, w, h)],
            Shape::Frame => vec![left, right, top, bottom],
            Shape::H => vec![left, right, mid_h],
            Shape::L => vec![left, bottom],
            Shape::T => vec![top, mid_v],
            Shape::U => vec![left, right, bottom],
            Shape::E => vec![left, top, mid_h, bottom],
            Shape::Cross => vec![mid_h, mid_v],
            Shape::IBeam => vec![top, mid_v, bottom],
        }
    }
}

/// A rendered glyph and its annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Glyph {
    pub bbox: BBox,
    pub shape: Shape,
    pub broken: bool,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub image: RgbImage,
    pub glyphs: Vec<Glyph>,
}

impl Scene {
    pub fn bboxes(&self) -> Vec<BBox> {
        self.glyphs.iter().map(|g| g.bbox).collect()
    }
}

/// Draws a glyph aspect ratio from the configured mixture.
pub fn sample_aspect<R: Rng>(config: &SynthConfig, rng: &mut R) -> f64 {
    let total: f64 = config.aspect_mixture.iter().map(|m| m.1).sum();
    let mut u = rng.random_range(0.0..total);
    let mut ratio = config.aspect_mixture[config.aspect_mixture.len() - 1].0;
    for &(a, w) in &config.aspect_mixture {
        if u < w {
            ratio = a;
            break;
        }
        u -= w;
    }
    if config.aspect_jitter > 0.0 {
        let n = Normal::new(0.0, config.aspect_jitter).expect("finite jitter");
        ratio *= n.sample(rng).exp();
    }
    ratio
}

fn luminance(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

struct Canvas {
    w: usize,
    h: usize,
    rgb: Vec<[f64; 3]>,
}

impl Canvas {
    fn fill_rect(&mut self, x: u32, y: u32, w: u32, h: u32, color: [f64; 3]) {
        for yy in y as usize..((y + h) as usize).min(self.h) {
            for xx in x as usize..((x + w) as usize).min(self.w) {
                self.rgb[yy * self.w + xx] = color;
            }
        }
    }
}

fn background(canvas: &mut Canvas, base: [f64; 3], config: &SynthConfig, rng: &mut ChaCha8Rng) {
    // smooth texture: a few random low-frequency sinusoids per channel
    let waves: Vec<(f64, f64, f64, f64)> = if config.texture {
        (0..4)
            .map(|_| {
                (
                    rng.random_range(0.02..0.2),
                    rng.random_range(0.02..0.2),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(4.0..14.0),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    for y in 0..canvas.h {
        for x in 0..canvas.w {
            let t: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * (fx * x as f64 + fy * y as f64 + ph).sin())
                .sum();
            canvas.rgb[y * canvas.w + x] = base.map(|c| c + t);
        }
    }
}

fn illuminate(canvas: &mut Canvas, rng: &mut ChaCha8Rng) {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let lo = rng.random_range(0.45..0.8);
    let hi = rng.random_range(1.0..1.25);
    let span = (canvas.w as f64 * dx.abs() + canvas.h as f64 * dy.abs()).max(1.0);
    let (ox, oy) = (
        if dx < 0.0 { canvas.w as f64 } else { 0.0 },
        if dy < 0.0 { canvas.h as f64 } else { 0.0 },
    );
    for y in 0..canvas.h {
        for x in 0..canvas.w {
            let t = ((x as f64 - ox) * dx + (y as f64 - oy) * dy) / span;
            let gain = lo + (hi - lo) * t.clamp(0.0, 1.0);
            let px = &mut canvas.rgb[y * canvas.w + x];
            *px = px.map(|c| c * gain);
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(0.0..255.0))
}

/// Glyph colour at least 90 luminance levels away from the background.
fn contrasting(bg: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let c = random_color(rng);
        if (luminance(c) - luminance(bg)).abs() >= 90.0 {
            return c;
        }
    }
}

fn place(w: u32, h: u32, img_w: u32, img_h: u32, taken: &[BBox], rng: &mut ChaCha8Rng) -> Option<(u32, u32)> {
    if w + 4 > img_w || h + 4 > img_h {
        return None;
    }
    for _ in 0..60 {
        let x = rng.random_range(2..=img_w - w - 2);
        let y = rng.random_range(2..=img_h - h - 2);
        let margin = BBox::new(x as f64 - 3.0, y as f64 - 3.0, w as f64 + 6.0, h as f64 + 6.0);
        if taken.iter().all(|t| margin.intersection_area(t) == 0.0) {
            return Some((x, y));
        }
    }
    None
}

fn draw_glyph(
    canvas: &mut Canvas,
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    shape: Shape,
    broken: bool,
    color: [f64; 3],
    bg: [f64; 3],
    rng: &mut ChaCha8Rng,
) {
    let t = ((w.min(h) as f64 * rng.random_range(0.16..0.26)).round() as u32).max(2);
    for (sx, sy, sw, sh) in shape.strokes(w, h, t) {
        canvas.fill_rect(x + sx, y + sy, sw, sh, color);
    }
    if broken {
        // cut a gap through the middle third, leaving the outer edges intact
        let gap = (h / 8).max(2);
        if h > gap + 4 {
            let gy = y + h / 3 + rng.random_range(0..=(h / 3).saturating_sub(gap).max(1));
            for yy in gy..gy + gap {
                for xx in x..x + w {
                    let idx = yy as usize * canvas.w + xx as usize;
                    if canvas.rgb[idx] == color {
                        canvas.rgb[idx] = bg;
                    }
                }
            }
        }
    }
}

/// Renders scene `index` of the dataset described by `config`.
pub fn synth_scene(config: &SynthConfig, index: usize) -> Result<Scene> {
    config.validate()?;
    let mut rng = image_rng(config.seed, index);
    let img_w = rng.random_range(config.width.0..=config.width.1);
    let img_h = rng.random_range(config.height.0..=config.height.1);
    let mut canvas = Canvas {
        w: img_w as usize,
        h: img_h as usize,
        rgb: vec![[0.0; 3]; (img_w * img_h) as usize],
    };
    let bg = random_color(&mut rng);
    background(&mut canvas, bg, config, &mut rng);

    let count = rng.random_range(config.glyphs.0..=config.glyphs.1);
    let mut glyphs: Vec<Glyph> = Vec::with_capacity(count);
    let (hmin, hmax) = config.glyph_height;
    let mut misses = 0;
    while glyphs.len() < count && misses < 64 {
        let gh = rng.random_range(hmin.ln()..=hmax.ln()).exp();
        let ratio = sample_aspect(config, &mut rng);
        let (w, h) = (((gh * ratio).round() as u32).max(3), (gh.round() as u32).max(3));
        let pair = rng.random_bool(config.touching_pairs) && glyphs.len() + 2 <= count;
        let partner_w = if pair {
            (((gh * sample_aspect(config, &mut rng)).round()) as u32).max(3)
        } else {
            0
        };
        let taken: Vec<BBox> = glyphs.iter().map(|g| g.bbox).collect();
        let Some((x, y)) = place(w + partner_w, h, img_w, img_h, &taken, &mut rng) else {
            // too big for the free space; redraw, and give up once the scene is full
            misses += 1;
            continue;
        };
        let color = contrasting(bg, &mut rng);
        let mut boxes = vec![(x, w)];
        if pair {
            boxes.push((x + w, partner_w));
        }
        for (gx, gw) in boxes {
            let shape = SHAPES[rng.random_range(0..SHAPES.len())];
            let broken = shape != Shape::Block && rng.random_bool(config.broken_glyphs);
            draw_glyph(&mut canvas, gx, y, gw, h, shape, broken, color, bg, &mut rng);
            glyphs.push(Glyph {
                bbox: BBox::new(gx as f64, y as f64, gw as f64, h as f64),
                shape,
                broken,
            });
        }
    }

    if config.illumination {
        illuminate(&mut canvas, &mut rng);
    }
    let noise = Normal::new(0.0, 4.0).expect("valid sigma");
    let mut image = RgbImage::new(img_w, img_h);
    for (i, px) in image.pixels_mut().enumerate() {
        let c = canvas.rgb[i];
        *px = Rgb(c.map(|v| (v + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8));
    }
    Ok(Scene { image, glyphs })
}

pub fn scene_file_name(index: usize) -> String {
    format!("scene_{index:05}.png")
}

/// Writes `count` scenes as PNGs plus `annotations.txt` and the effective
/// config (`synth_config.txt`) into `out_dir`.
pub fn synth_generate(config: &SynthConfig, count: usize, out_dir: &Path) -> Result<()> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::new();
    for i in 0..count {
        let scene = synth_scene(config, i)?;
        let name = scene_file_name(i);
        save_png(&out_dir.join(&name), &scene.image)?;
        entries.extend(scene.glyphs.iter().map(|g| AnnotationEntry {
            image_file: name.clone(),
            bbox: g.bbox,
            label: Some(g.shape.name().to_string()),
        }));
    }
    let ann = out_dir.join("annotations.txt");
    std::fs::write(&ann, format_annotations(&entries)).map_err(|e| Error::io(&ann, e))?;
    let cfg = out_dir.join("synth_config.txt");
    std::fs::write(&cfg, format_pairs(&config.to_pairs())).map_err(|e| Error::io(&cfg, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn aspect_mixture_statistics() {
        let config = SynthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 3];
        let n = 10_000;
        for _ in 0..n {
            let r: f64 = sample_aspect(&config, &mut rng).ln();
            let k = [0.5f64, 1.0, 2.0]
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1.ln() - r).abs().total_cmp(&(b.1.ln() - r).abs()))
                .unwrap()
                .0;
            counts[k] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.05, "{counts:?}");
        }
    }

    #[test]
    fn glyph_boxes_are_tight() {
        let config = SynthConfig {
            texture: false,
            illumination: false,
            broken_glyphs: 0.5,
            ..Default::default()
        };
        for i in 0..5 {
            let scene = synth_scene(&config, i).unwrap();
            assert!(!scene.glyphs.is_empty());
            for g in &scene.glyphs {
                let b = g.bbox;
                assert!(b.right() <= scene.image.width() as f64 && b.bottom() <= scene.image.height() as f64);
            }
        }
    }

    #[test]
    fn strokes_reach_every_side() {
        for shape in SHAPES {
            let (w, h) = (13, 27);
            let rects = shape.strokes(w, h, 3);
            let x0 = rects.iter().map(|r| r.0).min().unwrap();
            let y0 = rects.iter().map(|r| r.1).min().unwrap();
            let x1 = rects.iter().map(|r| r.0 + r.2).max().unwrap();
            let y1 = rects.iter().map(|r| r.1 + r.3).max().unwrap();
            assert_eq!((x0, y0, x1, y1), (0, 0, w, h), "{shape:?}");
        }
    }

    #[test]
    fn touching_pairs_keep_one_box_per_glyph() {
        let config = SynthConfig {
            touching_pairs: 1.0,
            glyphs: (4, 4),
            ..Default::default()
        };
        let scene = synth_scene(&config, 0).unwrap();
        let touching = scene
            .glyphs
            .windows(2)
            .any(|w| w[0].bbox.right() == w[1].bbox.x && w[0].bbox.y == w[1].bbox.y);
        assert!(touching);
        assert!(scene.glyphs.iter().all(|g| g.bbox.w >= 3.0));
    }

    #[test]
    fn echoed_config_reads_back() {
        let config = SynthConfig {
            seed: 9,
            texture: false,
            aspect_mixture: vec![(0.25, 1.0), (4.0, 2.0)],
            ..Default::default()
        };
        let file = ConfigFile::parse(&format_pairs(&config.to_pairs()), "echo").unwrap();
        file.check_keys(&SynthConfig::KEYS).unwrap();
        let mut back = SynthConfig::default();
        back.apply(&file).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn default_scenes_reach_the_minimum_glyph_count() {
        for seed in 0..4 {
            let config = SynthConfig {
                seed,
                ..Default::default()
            };
            for i in 0..50 {
                let n = synth_scene(&config, i).unwrap().glyphs.len();
                assert!(n >= config.glyphs.0, "seed {seed} scene {i}: {n} glyphs");
            }
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let config = SynthConfig {
            seed: 7,
            ..Default::default()
        };
        let a = synth_scene(&config, 3).unwrap();
        let b = synth_scene(&config, 3).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.glyphs, b.glyphs);
    }
}
