//! Raster file I/O and grid composition.
//!
//! Sketch inputs arrive as grayscale or RGB rasters and are converted to
//! `[0, 1]` float images; sample grids are normalized jointly and written as
//! 8-bit grayscale PNGs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Load a raster (PNG and friends) as a float image in `[0, 1]`.
/// Grayscale files become single-channel, everything else RGB.
pub fn load_image(path: &Path) -> Result<Image<f64>> {
    let dynamic = image::open(path)
        .map_err(|e| Error::input(format!("cannot read image {}: {e}", path.display())))?;
    Ok(match dynamic {
        image::DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            Image::from_fn(h as usize, w as usize, 1, |y, x, _| {
                f64::from(img.get_pixel(x as u32, y as u32).0[0]) / 255.0
            })
        }
        image::DynamicImage::ImageLuma16(img) => {
            let (w, h) = img.dimensions();
            Image::from_fn(h as usize, w as usize, 1, |y, x, _| {
                f64::from(img.get_pixel(x as u32, y as u32).0[0]) / 65535.0
            })
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            Image::from_fn(h as usize, w as usize, 3, |y, x, c| {
                f64::from(rgb.get_pixel(x as u32, y as u32).0[c]) / 255.0
            })
        }
    })
}

/// Write a single-channel float image assumed to be in `[0, 1]` (clamped).
pub fn save_unit_image(path: &Path, img: &Image<f64>) -> Result<()> {
    let gray = img.to_single_channel();
    let buf = image::GrayImage::from_fn(gray.width as u32, gray.height as u32, |x, y| {
        let v = gray.get(y as usize, x as usize, 0).clamp(0.0, 1.0);
        image::Luma([(v * 255.0).round() as u8])
    });
    buf.save(path)
        .map_err(|e| Error::input(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Write with min/max normalization (for unbounded synthesis outputs).
pub fn save_normalized_image(path: &Path, img: &Image<f64>) -> Result<()> {
    let gray = img.to_single_channel();
    let (lo, hi) = min_max(&gray.data);
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
    let normalized = gray.map(|v| ((v - lo) * scale).clamp(0.0, 1.0));
    save_unit_image(path, &normalized)
}

fn min_max(data: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Tile images row-major into one canvas with `pad` separator pixels,
/// normalizing jointly so cells are comparable.
pub fn compose_grid(images: &[Image<f64>], cols: usize, pad: usize) -> Result<Image<f64>> {
    let first = images
        .first()
        .ok_or_else(|| Error::argument("cannot compose an empty grid"))?;
    let (h, w) = (first.height, first.width);
    for img in images {
        if img.height != h || img.width != w {
            return Err(Error::input("grid cells must share dimensions"));
        }
    }
    let cols = cols.max(1);
    let rows = images.len().div_ceil(cols);
    let (lo, hi) = images
        .iter()
        .map(|img| min_max(&img.to_single_channel().data))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(alo, ahi), (lo, hi)| {
            (alo.min(lo), ahi.max(hi))
        });
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
    let canvas_h = rows * h + pad * rows.saturating_sub(1);
    let canvas_w = cols * w + pad * cols.saturating_sub(1);
    let mut canvas = Image::from_fn(canvas_h, canvas_w, 1, |_, _, _| 1.0);
    for (i, img) in images.iter().enumerate() {
        let gray = img.to_single_channel();
        let r = i / cols;
        let c = i % cols;
        let oy = r * (h + pad);
        let ox = c * (w + pad);
        for y in 0..h {
            for x in 0..w {
                let v = ((gray.get(y, x, 0) - lo) * scale).clamp(0.0, 1.0);
                canvas.set(oy + y, ox + x, 0, v);
            }
        }
    }
    Ok(canvas)
}
