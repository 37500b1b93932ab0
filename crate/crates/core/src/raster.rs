//! Conversions between 8-bit RGB images and network input tensors, and the
//! resampler shared by training crops and the inference pyramid.

use image::RgbImage;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `[0, 255]` pixels map to `[-0.5, 0.5]`.
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros([1, 3, h.max(1), w.max(1)]);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            t.set(0, c, y as usize, x as usize, px[c] as f32 / 255.0 - 0.5);
        }
    }
    t
}

pub fn tensor_to_rgb(t: &Tensor<f32>) -> RgbImage {
    let (h, w) = (t.height(), t.width());
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb(std::array::from_fn(|c| {
            let v = t.get(0, c.min(t.channels() - 1), y as usize, x as usize);
            ((v + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8
        }))
    })
}

#[inline]
fn bilinear(plane: &[f32], w: usize, h: usize, fx: f64, fy: f64) -> f32 {
    let fx = fx.clamp(0.0, (w - 1) as f64);
    let fy = fy.clamp(0.0, (h - 1) as f64);
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let ax = (fx - x0 as f64) as f32;
    let ay = (fy - y0 as f64) as f32;
    let top = plane[y0 * w + x0] * (1.0 - ax) + plane[y0 * w + x1] * ax;
    let bottom = plane[y1 * w + x0] * (1.0 - ax) + plane[y1 * w + x1] * ax;
    top * (1.0 - ay) + bottom * ay
}

/// Resamples `region` (continuous pixel coordinates, pixel `i` spanning
/// `[i, i + 1)`) of batch item 0 to `out_w x out_h`.
///
/// Bilinear taps with edge clamping; when shrinking, each output pixel
/// averages a `ceil(factor)` square grid of taps.
pub fn resample_region(src: &Tensor<f32>, region: &BBox, out_w: usize, out_h: usize) -> Result<Tensor<f32>> {
    if out_w == 0 || out_h == 0 || !region.is_valid() {
        return Err(Error::invalid(format!("cannot resample {region:?} to {out_w}x{out_h}")));
    }
    let (c, h, w) = (src.channels(), src.height(), src.width());
    let step_x = region.w / out_w as f64;
    let step_y = region.h / out_h as f64;
    let taps_x = step_x.ceil().max(1.0) as usize;
    let taps_y = step_y.ceil().max(1.0) as usize;
    let norm = 1.0 / (taps_x * taps_y) as f32;

    // Tap positions in source pixel-index coordinates, shared by all channels.
    let xs: Vec<f64> = (0..out_w * taps_x)
        .map(|i| region.x + (i as f64 + 0.5) * step_x / taps_x as f64 - 0.5)
        .collect();
    let ys: Vec<f64> = (0..out_h * taps_y)
        .map(|i| region.y + (i as f64 + 0.5) * step_y / taps_y as f64 - 0.5)
        .collect();

    let mut out = Tensor::zeros([1, c, out_h, out_w]);
    let item = src.item(0);
    for ch in 0..c {
        let plane = &item[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = 0.0f32;
                for ty in 0..taps_y {
                    let fy = ys[oy * taps_y + ty];
                    for tx in 0..taps_x {
                        acc += bilinear(plane, w, h, xs[ox * taps_x + tx], fy);
                    }
                }
                out.set(0, ch, oy, ox, acc * norm);
            }
        }
    }
    Ok(out)
}

/// Rescales a whole image by `scale`; output extents are `floor(extent * scale)`
/// so that image coordinates map exactly by multiplication.
pub fn rescale(src: &Tensor<f32>, scale: f64) -> Result<Tensor<f32>> {
    let out_w = (src.width() as f64 * scale + 1e-9).floor() as usize;
    let out_h = (src.height() as f64 * scale + 1e-9).floor() as usize;
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!("scale {scale} collapses the image")));
    }
    if (scale - 1.0).abs() < 1e-12 {
        return Ok(src.clone());
    }
    let region = BBox::new(0.0, 0.0, out_w as f64 / scale, out_h as f64 / scale);
    resample_region(src, &region, out_w, out_h)
}
