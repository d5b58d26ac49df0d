//! Synthetic phantoms and paired `(x_u, x_t)` datasets.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::ComplexGrid;
use crate::kspace::{acquire, SamplingMask};
use crate::parallel::map_indexed;
use crate::tensor::Tensor;

/// Drawing primitive in normalized coordinates (`[-1, 1]` across each axis,
/// `y` down the rows). Intensities add before the final clamp to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    Ellipse {
        cx: f64,
        cy: f64,
        a: f64,
        b: f64,
        theta: f64,
        intensity: f64,
    },
    /// Segment of width `width` pixels.
    Line {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        width: f64,
        intensity: f64,
    },
    /// Disc of radius `radius` pixels.
    Dot {
        cx: f64,
        cy: f64,
        radius: f64,
        intensity: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    /// `[h, w]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub primitives: Vec<Primitive>,
}

/// Number of lines and of dots drawn at unit fine-detail density.
pub const DETAIL_PER_UNIT_DENSITY: f64 = 6.0;

/// Deterministic phantoms: a head-like ellipse with smooth inner ellipses plus
/// thin lines and dots whose counts scale with `fine_detail_density`.
pub fn gen_phantoms(
    count: usize,
    h: usize,
    w: usize,
    seed: u64,
    fine_detail_density: f64,
) -> Result<Vec<Phantom>> {
    if count == 0 {
        return Err(Error::InvalidArgument("phantom count must be >= 1".into()));
    }
    if h == 0 || w == 0 || !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "phantom size must be even and nonzero, got {h}x{w}"
        )));
    }
    if !(fine_detail_density >= 0.0) || !fine_detail_density.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "fine_detail_density must be a nonnegative number, got {fine_detail_density}"
        )));
    }
    Ok(map_indexed(count, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let primitives = describe(&mut rng, h, w, fine_detail_density);
        Phantom {
            image: render(&primitives, h, w),
            primitives,
        }
    }))
}

fn describe(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> Vec<Primitive> {
    let mut out = Vec::new();
    let (ha, hb) = (rng.gen_range(0.68..0.9), rng.gen_range(0.78..0.95));
    out.push(Primitive::Ellipse {
        cx: rng.gen_range(-0.04..0.04),
        cy: rng.gen_range(-0.04..0.04),
        a: ha,
        b: hb,
        theta: rng.gen_range(-0.2..0.2),
        intensity: rng.gen_range(0.55..0.8),
    });
    for _ in 0..rng.gen_range(3..7) {
        let a = rng.gen_range(0.1..0.4) * ha;
        let b = rng.gen_range(0.1..0.4) * hb;
        out.push(Primitive::Ellipse {
            cx: rng.gen_range(-0.45..0.45) * ha,
            cy: rng.gen_range(-0.45..0.45) * hb,
            a,
            b,
            theta: rng.gen_range(0.0..PI),
            intensity: rng.gen_range(-0.35..0.3),
        });
    }
    let details = libm::round(DETAIL_PER_UNIT_DENSITY * density) as usize;
    let px = 2.0 / h.min(w) as f64;
    for _ in 0..details {
        let (x0, y0) = (rng.gen_range(-0.6..0.6) * ha, rng.gen_range(-0.6..0.6) * hb);
        let len = rng.gen_range(8.0..24.0) * px;
        let dir = rng.gen_range(0.0..PI);
        out.push(Primitive::Line {
            x0,
            y0,
            x1: x0 + len * libm::cos(dir),
            y1: y0 + len * libm::sin(dir),
            width: rng.gen_range(1.0..2.0),
            intensity: contrast(rng),
        });
    }
    for _ in 0..details {
        out.push(Primitive::Dot {
            cx: rng.gen_range(-0.6..0.6) * ha,
            cy: rng.gen_range(-0.6..0.6) * hb,
            radius: rng.gen_range(0.5..1.0),
            intensity: contrast(rng),
        });
    }
    out
}

fn contrast(rng: &mut ChaCha8Rng) -> f64 {
    let mag = rng.gen_range(0.3..0.6);
    if rng.gen_bool(0.5) {
        mag
    } else {
        -mag
    }
}

/// Coverage of a shape with signed distance `d` (pixels, negative inside),
/// with a one-pixel linear ramp.
#[inline]
fn coverage(d: f64) -> f64 {
    (0.5 - d).clamp(0.0, 1.0)
}

fn render(prims: &[Primitive], h: usize, w: usize) -> Tensor<f32> {
    let sx = w as f64 / 2.0;
    let sy = h as f64 / 2.0;
    Tensor::from_fn(&[h, w], |i| {
        let (r, c) = (i / w, i % w);
        let x = (c as f64 + 0.5) / sx - 1.0;
        let y = (r as f64 + 0.5) / sy - 1.0;
        let mut v = 0.0;
        for p in prims {
            v += match *p {
                Primitive::Ellipse {
                    cx,
                    cy,
                    a,
                    b,
                    theta,
                    intensity,
                } => {
                    let (s, co) = (libm::sin(theta), libm::cos(theta));
                    let (dx, dy) = (x - cx, y - cy);
                    let u = (dx * co + dy * s) / a;
                    let t = (-dx * s + dy * co) / b;
                    let rho = libm::sqrt(u * u + t * t);
                    let d = (rho - 1.0) * a.min(b) * sx.min(sy);
                    intensity * coverage(d)
                }
                Primitive::Line {
                    x0,
                    y0,
                    x1,
                    y1,
                    width,
                    intensity,
                } => {
                    let (p0x, p0y) = (x0 * sx, y0 * sy);
                    let (vx, vy) = (x1 * sx - p0x, y1 * sy - p0y);
                    let (qx, qy) = (x * sx - p0x, y * sy - p0y);
                    let len2 = vx * vx + vy * vy;
                    let t = if len2 > 0.0 {
                        ((qx * vx + qy * vy) / len2).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let (ex, ey) = (qx - t * vx, qy - t * vy);
                    intensity * coverage(libm::sqrt(ex * ex + ey * ey) - width / 2.0)
                }
                Primitive::Dot {
                    cx,
                    cy,
                    radius,
                    intensity,
                } => {
                    let (dx, dy) = ((x - cx) * sx, (y - cy) * sy);
                    intensity * coverage(libm::sqrt(dx * dx + dy * dy) - radius)
                }
            };
        }
        v.clamp(0.0, 1.0) as f32
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Zero-filled input, `[h, w]`.
    pub x_u: Tensor<f32>,
    /// Fully sampled target, `[h, w]`.
    pub x_t: Tensor<f32>,
    /// Undersampled measurements.
    pub y: ComplexGrid<f32>,
}

impl Sample {
    /// Simulates acquisition of `x_t` under `mask`.
    pub fn acquire(id: impl Into<String>, x_t: Tensor<f32>, mask: &SamplingMask) -> Result<Self> {
        let (y, x_u) = acquire(&x_t, mask)?;
        Ok(Self {
            id: id.into(),
            x_u,
            x_t,
            y,
        })
    }
}

/// A split of paired samples sharing one mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub split: Split,
    pub mask: SamplingMask,
    pub items: Vec<Sample>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Common `(h, w)` of every item.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let first = self.items.first().ok_or(Error::Empty("dataset"))?;
        let (_, h, w) = first.x_t.plane_dims("dataset")?;
        for s in &self.items {
            if s.x_t.shape() != first.x_t.shape() || s.x_u.shape() != first.x_t.shape() {
                return Err(Error::InvalidArgument(format!(
                    "item {} has shape {:?}, expected {:?}",
                    s.id,
                    s.x_t.shape(),
                    first.x_t.shape()
                )));
            }
        }
        Ok((h, w))
    }
}

/// Id assigned to the `i`-th generated phantom.
pub fn phantom_id(i: usize) -> String {
    format!("phantom_{i:04}")
}

/// Deterministic shuffle of `0..n` split into `(train, val)` index lists.
pub fn split_indices(n: usize, split_ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Empty("phantom list"));
    }
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split_ratio must lie in (0, 1), got {split_ratio}"
        )));
    }
    let n_train = libm::floor(split_ratio * n as f64 + 1e-9) as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!(
            "split_ratio {split_ratio} over {n} items leaves an empty split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = order.split_off(n_train);
    Ok((order, val))
}

/// Pairs each target with its zero-filled input and splits the set.
pub fn build_dataset(
    targets: Vec<(String, Tensor<f32>)>,
    mask: &SamplingMask,
    split_ratio: f64,
    seed: u64,
) -> Result<(PairedDataset, PairedDataset)> {
    let (train_idx, val_idx) = split_indices(targets.len(), split_ratio, seed)?;
    let mut slots: Vec<Option<(String, Tensor<f32>)>> = targets.into_iter().map(Some).collect();
    let mut take = |idx: &[usize], split| -> Result<PairedDataset> {
        let items = idx
            .iter()
            .map(|&i| {
                let (id, x) = slots[i].take().expect("indices are a permutation");
                Sample::acquire(id, x, mask)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PairedDataset {
            split,
            mask: mask.clone(),
            items,
        })
    };
    let train = take(&train_idx, Split::Train)?;
    let val = take(&val_idx, Split::Val)?;
    Ok((train, val))
}
