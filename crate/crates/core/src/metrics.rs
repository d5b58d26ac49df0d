//! Image-quality metrics computed in `f64`.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5) with `K1 = 0.01` and
//! `K2 = 0.03`, evaluated over every fully contained window position. HFEN
//! filters with a 15x15 Laplacian of Gaussian (sigma 1.5) whose taps are
//! shifted to sum to zero, using half-sample symmetric boundary extension.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const HFEN_KERNEL: usize = 15;
pub const HFEN_SIGMA: f64 = 1.5;

/// A single-plane image as `f64` with its extents.
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

fn plane<T: Real>(x: &Tensor<T>, op: &'static str) -> Result<Plane> {
    let (planes, h, w) = x.plane_dims(op)?;
    if planes != 1 {
        return Err(shape_err(op, format!("expected one image plane, got {:?}", x.shape())));
    }
    Ok(Plane {
        h,
        w,
        v: x.data().iter().map(|v| v.to_f64_lossy()).collect(),
    })
}

fn pair<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, op: &'static str) -> Result<(Plane, Plane)> {
    let p = plane(pred, op)?;
    let t = plane(target, op)?;
    if (p.h, p.w) != (t.h, t.w) {
        return Err(shape_err(op, format!("{}x{} vs {}x{}", p.h, p.w, t.h, t.w)));
    }
    Ok((p, t))
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `||target - pred||^2 / ||target||^2`.
pub fn nmse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    let (p, t) = pair(pred, target, "nmse")?;
    let denom = sq_norm(&t.v);
    if denom == 0.0 {
        return Err(Error::InvalidArgument("nmse: target has zero norm".into()));
    }
    Ok(sq_dist(&t.v, &p.v) / denom)
}

/// `10 log10(range^2 / mse)` in dB; `+inf` when the images are identical.
pub fn psnr<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, data_range: f64) -> Result<f64> {
    let (p, t) = pair(pred, target, "psnr")?;
    let mse = sq_dist(&p.v, &t.v) / p.v.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(data_range * data_range / mse))
}

fn gaussian_1d(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering: `(h - k + 1) x (w - k + 1)` output.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = k.iter().enumerate().map(|(j, kv)| kv * x[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = k.iter().enumerate().map(|(i, kv)| kv * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity.
pub fn ssim<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, data_range: f64) -> Result<f64> {
    let (p, t) = pair(pred, target, "ssim")?;
    if p.h < SSIM_WINDOW || p.w < SSIM_WINDOW {
        return Err(shape_err(
            "ssim",
            format!("{}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", p.h, p.w),
        ));
    }
    let (h, w) = (p.h, p.w);
    let k = gaussian_1d(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mx = filter_valid(&p.v, h, w, &k);
    let my = filter_valid(&t.v, h, w, &k);
    let mxx = filter_valid(&prod(&p.v, &p.v), h, w, &k);
    let myy = filter_valid(&prod(&t.v, &t.v), h, w, &k);
    let mxy = filter_valid(&prod(&p.v, &t.v), h, w, &k);
    let c1 = (SSIM_K1 * data_range) * (SSIM_K1 * data_range);
    let c2 = (SSIM_K2 * data_range) * (SSIM_K2 * data_range);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Zero-sum 15x15 Laplacian-of-Gaussian kernel, row-major.
pub fn log_kernel() -> Vec<f64> {
    let n = HFEN_KERNEL;
    let c = (n / 2) as f64;
    let s2 = HFEN_SIGMA * HFEN_SIGMA;
    let mut g = Vec::with_capacity(n * n);
    let mut r2 = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let d = (i as f64 - c) * (i as f64 - c) + (j as f64 - c) * (j as f64 - c);
            g.push(libm::exp(-d / (2.0 * s2)));
            r2.push(d);
        }
    }
    let gs: f64 = g.iter().sum();
    let k: Vec<f64> = g
        .iter()
        .zip(&r2)
        .map(|(gv, d)| gv / gs * (d - 2.0 * s2) / (s2 * s2))
        .collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.into_iter().map(|v| v - mean).collect()
}

/// Half-sample symmetric index: `d c b a | a b c d | d c b a`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn log_filter(x: &Plane, k: &[f64]) -> Vec<f64> {
    let n = HFEN_KERNEL;
    let half = (n / 2) as isize;
    let mut out = vec![0.0; x.h * x.w];
    for r in 0..x.h {
        for c in 0..x.w {
            let mut acc = 0.0;
            for i in 0..n {
                let rr = reflect(r as isize + i as isize - half, x.h);
                for j in 0..n {
                    let cc = reflect(c as isize + j as isize - half, x.w);
                    acc += k[i * n + j] * x.v[rr * x.w + cc];
                }
            }
            out[r * x.w + c] = acc;
        }
    }
    out
}

/// `||LoG(target) - LoG(pred)|| / ||LoG(target)||`.
pub fn hfen<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    let (p, t) = pair(pred, target, "hfen")?;
    let k = log_kernel();
    let lt = log_filter(&t, &k);
    let lp = log_filter(&p, &k);
    let denom = sq_norm(&lt);
    if denom <= 1e-24 * sq_norm(&t.v) {
        return Err(Error::InvalidArgument("hfen: filtered target has zero norm".into()));
    }
    Ok(libm::sqrt(sq_dist(&lt, &lp) / denom))
}

/// All four metrics of one reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub nmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub hfen: f64,
}

impl ImageMetrics {
    pub const NAMES: [&'static str; 4] = ["nmse", "psnr", "ssim", "hfen"];

    pub fn values(&self) -> [f64; 4] {
        [self.nmse, self.psnr, self.ssim, self.hfen]
    }

    pub fn from_values(v: [f64; 4]) -> Self {
        Self {
            nmse: v[0],
            psnr: v[1],
            ssim: v[2],
            hfen: v[3],
        }
    }
}

/// Scores `pred` against `target` with `data_range = max(target)`.
pub fn evaluate_image<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<ImageMetrics> {
    let range = target
        .data()
        .iter()
        .fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64_lossy()));
    Ok(ImageMetrics {
        nmse: nmse(pred, target)?,
        psnr: psnr(pred, target, range)?,
        ssim: ssim(pred, target, range)?,
        hfen: hfen(pred, target)?,
    })
}

/// Mean and population standard deviation of each metric over a set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: ImageMetrics,
    pub std: ImageMetrics,
}

/// Aggregates per-image metrics. Values are sorted before summation, so the
/// result does not depend on the order of `items`.
pub fn summarize(items: &[ImageMetrics]) -> Result<MetricSummary> {
    if items.is_empty() {
        return Err(Error::Empty("metric set"));
    }
    let n = items.len() as f64;
    let mut mean = [0.0; 4];
    let mut std = [0.0; 4];
    for k in 0..4 {
        let mut v: Vec<f64> = items.iter().map(|m| m.values()[k]).collect();
        v.sort_by(f64::total_cmp);
        let mu = v.iter().sum::<f64>() / n;
        let mut dev: Vec<f64> = v.iter().map(|x| (x - mu) * (x - mu)).collect();
        dev.sort_by(f64::total_cmp);
        mean[k] = mu;
        std[k] = libm::sqrt(dev.iter().sum::<f64>() / n);
    }
    Ok(MetricSummary {
        count: items.len(),
        mean: ImageMetrics::from_values(mean),
        std: ImageMetrics::from_values(std),
    })
}
