//! 8-bit grayscale PNG export and import.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};
use wrecon_core::Tensor;

use crate::error::{FormatError, Result};
use crate::fsutil;

/// Maps `[lo, hi]` linearly onto `[0, 255]`, clamping outside values.
pub fn window_to_u8(v: f32, lo: f32, hi: f32) -> u8 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * 255.0).round() as u8
}

pub fn encode_png(img: &Tensor<f32>, window: (f32, f32)) -> Result<Vec<u8>> {
    let (lo, hi) = window;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(FormatError::invalid("window", format!("need finite lo < hi, got ({lo}, {hi})")));
    }
    let (planes, h, w) = img.plane_dims("png")?;
    if planes != 1 {
        return Err(FormatError::invalid("image", format!("expected one plane, got {:?}", img.shape())));
    }
    let gray = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([window_to_u8(img.data()[y as usize * w + x as usize], lo, hi)])
    });
    let mut out = Cursor::new(Vec::new());
    gray.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| FormatError::invalid("png", e.to_string()))?;
    Ok(out.into_inner())
}

pub fn export_png(img: &Tensor<f32>, path: &Path, window: (f32, f32)) -> Result<()> {
    fsutil::write_atomic(path, &encode_png(img, window)?)
}

/// Reads any PNG as grayscale with values `pixel / 255` in `[0, 1]`.
pub fn decode_png(bytes: &[u8]) -> Result<Tensor<f32>> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| FormatError::invalid("png", e.to_string()))?
        .into_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|p| f32::from(p) / 255.0).collect();
    Ok(Tensor::new(&[h as usize, w as usize], data)?)
}

pub fn import_png(path: &Path) -> Result<Tensor<f32>> {
    decode_png(&fsutil::read(path)?)
}

/// Loads `.png` through [`import_png`] and anything else as IMGF.
pub fn load_any(path: &Path) -> Result<Tensor<f32>> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        import_png(path)
    } else {
        crate::imgf::load_image_f32(path)
    }
}
