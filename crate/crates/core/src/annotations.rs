//! Character-level annotation files.
//!
//! One box per line: `image_file x y w h [label]`, whitespace separated,
//! `#` starts a comment line. Image paths are relative to the annotation
//! file's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::RgbImage;
use log::info;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::evaluation::{GroundTruth, TruthBox};

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationEntry {
    pub image_file: String,
    pub bbox: BBox,
    pub label: Option<String>,
}

/// All boxes of one image, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageAnnotations {
    pub image_file: String,
    pub boxes: Vec<TruthBox>,
}

/// An image with its character boxes (clamped to the image).
#[derive(Clone, Debug)]
pub struct AnnotatedImage {
    pub id: String,
    pub pixels: RgbImage,
    pub boxes: Vec<TruthBox>,
}

impl AnnotatedImage {
    pub fn bboxes(&self) -> Vec<BBox> {
        self.boxes.iter().map(|b| b.bbox).collect()
    }
}

pub fn parse_annotations(text: &str, source: &str) -> Result<Vec<AnnotationEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 5 {
            return Err(err(format!(
                "expected `image_file x y w h [label]`, found {} fields",
                fields.len()
            )));
        }
        let mut nums = [0.0; 4];
        for (slot, field) in nums.iter_mut().zip(&fields[1..5]) {
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("'{field}' is not a number")))?;
        }
        let label = (fields.len() > 5).then(|| fields[5..].join(" "));
        out.push(AnnotationEntry {
            image_file: fields[0].to_string(),
            bbox: BBox::new(nums[0], nums[1], nums[2], nums[3]),
            label,
        });
    }
    Ok(out)
}

pub fn format_annotations(entries: &[AnnotationEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let b = &e.bbox;
        let _ = write!(s, "{} {} {} {} {}", e.image_file, b.x, b.y, b.w, b.h);
        if let Some(label) = &e.label {
            let _ = write!(s, " {label}");
        }
        s.push('\n');
    }
    s
}

/// Groups entries by image, keeping first-appearance order.
pub fn group_entries(entries: Vec<AnnotationEntry>) -> Vec<ImageAnnotations> {
    let mut out: Vec<ImageAnnotations> = Vec::new();
    for e in entries {
        let truth = TruthBox {
            bbox: e.bbox,
            label: e.label,
        };
        match out.iter_mut().find(|g| g.image_file == e.image_file) {
            Some(g) => g.boxes.push(truth),
            None => out.push(ImageAnnotations {
                image_file: e.image_file,
                boxes: vec![truth],
            }),
        }
    }
    out
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<ImageAnnotations>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(group_entries(parse_annotations(&text, &path.display().to_string())?))
}

pub fn ground_truth(images: &[ImageAnnotations]) -> GroundTruth {
    let mut gt = GroundTruth::default();
    for img in images {
        gt.images
            .entry(img.image_file.clone())
            .or_default()
            .extend(img.boxes.iter().cloned());
    }
    gt
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8())
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn resolve(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every annotated image. Boxes are clipped to the image; boxes that
/// fall entirely outside are dropped. Both cases are logged.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<AnnotatedImage>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for group in load_annotations(path)? {
        let pixels = load_rgb(&resolve(base, &group.image_file))?;
        let (w, h) = (pixels.width() as f64, pixels.height() as f64);
        let mut boxes = Vec::with_capacity(group.boxes.len());
        for t in group.boxes {
            match t.bbox.clamp_to(w, h) {
                Some(clamped) => {
                    if clamped != t.bbox {
                        info!("{}: clamped {:?} to {:?}", group.image_file, t.bbox, clamped);
                    }
                    boxes.push(TruthBox {
                        bbox: clamped,
                        label: t.label,
                    });
                }
                None => info!("{}: dropped out-of-image box {:?}", group.image_file, t.bbox),
            }
        }
        out.push(AnnotatedImage {
            id: group.image_file,
            pixels,
            boxes,
        });
    }
    Ok(out)
}
