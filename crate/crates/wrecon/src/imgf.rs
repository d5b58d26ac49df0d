//! Raw single-plane images: `"IMGF"`, u32 version, u32 height, u32 width,
//! then `height * width` little-endian `f32` values, row-major.

use std::path::Path;

use wrecon_core::Tensor;

use crate::error::{put_f32s, put_u32, to_u32, FormatError, Reader, Result};
use crate::fsutil;

pub const MAGIC: [u8; 4] = *b"IMGF";
pub const VERSION: u32 = 1;

pub fn encode(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let (planes, h, w) = img.plane_dims("imgf")?;
    if planes != 1 {
        return Err(FormatError::invalid("image", format!("expected one plane, got shape {:?}", img.shape())));
    }
    let mut out = Vec::with_capacity(16 + 4 * h * w);
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, to_u32(h, "height")?);
    put_u32(&mut out, to_u32(w, "width")?);
    put_f32s(&mut out, img.data());
    Ok(out)
}

/// Decodes to an `[h, w]` tensor.
pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FormatError::Version {
            expected: VERSION,
            found: version,
        });
    }
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    if h == 0 || w == 0 {
        return Err(FormatError::invalid("image", format!("zero extent {h}x{w}")));
    }
    let n = h
        .checked_mul(w)
        .ok_or_else(|| FormatError::Overflow(format!("{h}x{w}")))?;
    let data = r.f32s(n, "pixel data")?;
    r.finish()?;
    Ok(Tensor::new(&[h, w], data)?)
}

pub fn save_image_f32(img: &Tensor<f32>, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &encode(img)?)
}

pub fn load_image_f32(path: &Path) -> Result<Tensor<f32>> {
    decode(&fsutil::read(path)?)
}
