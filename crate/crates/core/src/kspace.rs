//! k-space acquisition simulation and the data-fidelity projection.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::fft::{fft2c, ifft2c, ComplexGrid};
use crate::real::Real;
use crate::tensor::Tensor;

/// Default Gaussian spread of the random lines, as a fraction of the height.
pub const DEFAULT_SIGMA_FRAC: f64 = 0.15;

/// Parameters a mask was generated from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskMeta {
    pub acceleration: f64,
    pub center_lines: usize,
    pub sigma_frac: f64,
    pub seed: u64,
}

/// Cartesian row mask: every k-space row is either fully kept or dropped.
///
/// Row indices are in centered k-space, so DC is row `height / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    rows: Vec<bool>,
    meta: MaskMeta,
}

impl SamplingMask {
    /// Builds a mask from explicit row flags.
    pub fn from_rows(rows: Vec<bool>, meta: MaskMeta) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("mask rows"));
        }
        Ok(Self { rows, meta })
    }

    pub fn height(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[bool] {
        &self.rows
    }

    pub fn meta(&self) -> &MaskMeta {
        &self.meta
    }

    pub fn is_kept(&self, row: usize) -> bool {
        self.rows[row]
    }

    pub fn kept_count(&self) -> usize {
        self.rows.iter().filter(|&&k| k).count()
    }

    pub fn dc_row(&self) -> usize {
        self.rows.len() / 2
    }

    fn check_grid<T: Real>(&self, g: &ComplexGrid<T>, op: &'static str) -> Result<()> {
        if g.height() != self.height() {
            return Err(shape_err(
                op,
                format!("grid height {} vs mask height {}", g.height(), self.height()),
            ));
        }
        Ok(())
    }
}

/// Row indices ordered by distance from the DC row, ties broken toward the
/// lower index.
pub fn rows_by_distance_from_dc(h: usize) -> Vec<usize> {
    let dc = (h / 2) as isize;
    let mut idx: Vec<usize> = (0..h).collect();
    idx.sort_by_key(|&i| ((i as isize - dc).unsigned_abs(), i));
    idx
}

/// Number of rows a mask of height `h` keeps at the given acceleration.
pub fn kept_row_count(h: usize, acceleration: f64) -> usize {
    (libm::round(h as f64 / acceleration) as usize).clamp(1, h)
}

/// Generates a variable-density Cartesian mask.
///
/// The `center_lines` rows nearest DC are always kept. The remaining
/// `round(h / acceleration) - center_lines` rows are drawn without replacement
/// with probability proportional to a zero-mean Gaussian over the row offset
/// from DC (standard deviation `sigma_frac * h`), using weighted reservoir keys
/// `ln(u) / weight` from a seeded ChaCha20 stream consumed in row order.
pub fn generate_mask(
    h: usize,
    acceleration: f64,
    center_lines: usize,
    sigma_frac: f64,
    seed: u64,
) -> Result<SamplingMask> {
    if h == 0 {
        return Err(Error::InvalidArgument("mask height must be positive".into()));
    }
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "acceleration must be >= 1, got {acceleration}"
        )));
    }
    if !(sigma_frac > 0.0) || !sigma_frac.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma_frac must be positive, got {sigma_frac}"
        )));
    }
    let budget = libm::floor(h as f64 / acceleration) as usize;
    if center_lines > budget {
        return Err(Error::InvalidArgument(format!(
            "center_lines {center_lines} exceeds floor({h}/{acceleration}) = {budget}"
        )));
    }
    let total = kept_row_count(h, acceleration);

    let mut rows = vec![false; h];
    for &i in rows_by_distance_from_dc(h).iter().take(center_lines) {
        rows[i] = true;
    }

    let sigma = sigma_frac * h as f64;
    let dc = (h / 2) as f64;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(h);
    for (i, &kept) in rows.iter().enumerate() {
        // One draw per row regardless of membership keeps the stream aligned.
        let u: f64 = 1.0 - rng.gen::<f64>();
        if kept {
            continue;
        }
        let off = (i as f64 - dc) / sigma;
        let weight = libm::exp(-0.5 * off * off);
        let key = if weight > 0.0 {
            libm::log(u) / weight
        } else {
            f64::NEG_INFINITY
        };
        keyed.push((key, i));
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in keyed.iter().take(total - center_lines) {
        rows[i] = true;
    }

    Ok(SamplingMask {
        rows,
        meta: MaskMeta {
            acceleration,
            center_lines,
            sigma_frac,
            seed,
        },
    })
}

/// `y = mask * fft2c(x)`; dropped rows are exactly zero.
pub fn undersample<T: Real>(x: &ComplexGrid<T>, m: &SamplingMask) -> Result<ComplexGrid<T>> {
    m.check_grid(x, "undersample")?;
    let mut y = fft2c(x);
    apply_mask(&mut y, m);
    Ok(y)
}

fn apply_mask<T: Real>(y: &mut ComplexGrid<T>, m: &SamplingMask) {
    let w = y.width();
    for (r, &kept) in m.rows().iter().enumerate() {
        if !kept {
            y.re_mut()[r * w..(r + 1) * w].fill(T::zero());
            y.im_mut()[r * w..(r + 1) * w].fill(T::zero());
        }
    }
}

/// Zero-filled reconstruction `x_u = ifft2c(y)`.
pub fn zero_filled<T: Real>(y: &ComplexGrid<T>, m: &SamplingMask) -> Result<ComplexGrid<T>> {
    m.check_grid(y, "zero_filled")?;
    Ok(ifft2c(y))
}

/// Row holding the conjugate-symmetric partner frequency of `row`.
#[inline]
pub fn partner_row(row: usize, h: usize) -> usize {
    (2 * (h / 2) + h - row) % h
}

impl SamplingMask {
    /// Rows known for a real-valued image: the mask plus its conjugate mirror.
    pub fn conjugate_closure(&self) -> Vec<bool> {
        let h = self.height();
        (0..h)
            .map(|r| self.rows[r] || self.rows[partner_row(r, h)])
            .collect()
    }
}

/// Completes measurements of a real-valued image by Hermitian symmetry:
/// rows mirrored from sampled rows get `conj(y(-k))`.
pub fn conjugate_complete<T: Real>(y: &ComplexGrid<T>, m: &SamplingMask) -> Result<ComplexGrid<T>> {
    m.check_grid(y, "conjugate_complete")?;
    let (h, w) = (y.height(), y.width());
    let mut out = y.clone();
    for r in (0..h).filter(|&r| !m.is_kept(r) && m.is_kept(partner_row(r, h))) {
        let pr = partner_row(r, h);
        for c in 0..w {
            out.set(r, c, y.get(pr, partner_row(c, w)).conj());
        }
    }
    Ok(out)
}

/// Simulates acquisition of a real image: returns `(y, x_u)` with `x_u` the
/// zero-filled reconstruction of the conjugate-completed measurements, which
/// is exactly real.
pub fn acquire<T: Real>(target: &Tensor<T>, m: &SamplingMask) -> Result<(ComplexGrid<T>, Tensor<T>)> {
    let y = undersample(&ComplexGrid::from_real(target)?, m)?;
    let xu = zero_filled(&conjugate_complete(&y, m)?, m)?.real_part();
    let xu = xu.reshape(target.shape())?;
    Ok((y, xu))
}

/// Weight of the measured data in the blend on sampled locations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lambda {
    Finite(f64),
    /// Hard replacement by the measurements.
    Infinite,
}

impl Serialize for Lambda {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        match *self {
            Lambda::Finite(v) => s.serialize_f64(v),
            Lambda::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Lambda {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v >= 0.0 && v.is_finite() => Ok(Lambda::Finite(v)),
            Raw::Num(v) if v == f64::INFINITY => Ok(Lambda::Infinite),
            Raw::Str(ref s) if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinite") => {
                Ok(Lambda::Infinite)
            }
            _ => Err(serde::de::Error::custom(
                "lambda must be a nonnegative number or \"inf\"",
            )),
        }
    }
}

/// Data-fidelity settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityConfig {
    pub lambda: Lambda,
    /// Noise weight of the penalty formulation. Stored for provenance; the
    /// projection below does not read it.
    #[serde(default)]
    pub alpha: f64,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        Self {
            lambda: Lambda::Infinite,
            alpha: 0.0,
        }
    }
}

impl FidelityConfig {
    pub fn validate(&self) -> Result<()> {
        match self.lambda {
            Lambda::Finite(v) if !(v >= 0.0) || !v.is_finite() => Err(Error::InvalidArgument(
                format!("lambda must be nonnegative, got {v}"),
            )),
            _ if !(self.alpha >= 0.0) => Err(Error::InvalidArgument(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            ))),
            _ => Ok(()),
        }
    }

    /// `(kept, measured)` weights on sampled rows: `x_hat * kept + y * measured`.
    pub fn blend<T: Real>(&self) -> (T, T) {
        match self.lambda {
            Lambda::Infinite => (T::zero(), T::one()),
            Lambda::Finite(l) => (
                T::from_f64_lossy(1.0 / (1.0 + l)),
                T::from_f64_lossy(l / (1.0 + l)),
            ),
        }
    }
}

/// Core of the fidelity operator on one plane: returns
/// `real(ifft2c(D * fft2c(x) + measured * y))`, where `D` scales the `known`
/// rows by `kept` and leaves the rest alone. `known` must be conjugate
/// symmetric and `y` Hermitian on it, so the inverse is real up to rounding.
/// With `y = None` this is the linear part alone, which is self-adjoint.
pub(crate) fn fidelity_plane<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    y: Option<&ComplexGrid<T>>,
    known: &[bool],
    kept: T,
    measured: T,
) -> Vec<T> {
    let grid = ComplexGrid::new(h, w, x.to_vec(), vec![T::zero(); h * w]).expect("plane extents");
    let mut k = fft2c(&grid);
    for (r, &on) in known.iter().enumerate() {
        if !on {
            continue;
        }
        for c in r * w..(r + 1) * w {
            let (yr, yi) = y.map_or((T::zero(), T::zero()), |y| (y.re()[c], y.im()[c]));
            k.re_mut()[c] = k.re()[c] * kept + yr * measured;
            k.im_mut()[c] = k.im()[c] * kept + yi * measured;
        }
    }
    ifft2c(&k).re().to_vec()
}

/// Data-fidelity correction of a real image estimate.
///
/// Measured rows are blended with (or, for an infinite lambda, replaced by)
/// `y`; their conjugate mirrors receive the matching Hermitian values so the
/// corrected spectrum stays that of a real image. All other frequencies pass
/// through untouched.
///
/// `x_pred` holds one plane (`[h, w]` or `[1, 1, h, w]`); the result keeps its shape.
pub fn data_fidelity<T: Real>(
    x_pred: &Tensor<T>,
    y: &ComplexGrid<T>,
    m: &SamplingMask,
    cfg: &FidelityConfig,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let (planes, h, w) = x_pred.plane_dims("data_fidelity")?;
    if planes != 1 || h != y.height() || w != y.width() {
        return Err(shape_err(
            "data_fidelity",
            format!(
                "image {:?} vs measurements {}x{}",
                x_pred.shape(),
                y.height(),
                y.width()
            ),
        ));
    }
    m.check_grid(y, "data_fidelity")?;
    let (kept, measured) = cfg.blend::<T>();
    let y_full = conjugate_complete(y, m)?;
    let out = fidelity_plane(
        x_pred.data(),
        h,
        w,
        Some(&y_full),
        &m.conjugate_closure(),
        kept,
        measured,
    );
    Tensor::new(x_pred.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[h, w], |_| rng.gen_range(0.0..1.0))
    }

    fn full_mask(h: usize) -> SamplingMask {
        generate_mask(h, 1.0, 0, DEFAULT_SIGMA_FRAC, 0).unwrap()
    }

    #[test]
    fn acceleration_one_keeps_everything() {
        let m = full_mask(32);
        assert!(m.rows().iter().all(|&k| k));
    }

    #[test]
    fn five_x_mask_on_256_rows() {
        let m = generate_mask(256, 5.0, 10, DEFAULT_SIGMA_FRAC, 3).unwrap();
        assert_eq!(m.kept_count(), 51);
        for i in 123..133 {
            assert!(m.is_kept(i), "center row {i} dropped");
        }
        assert_eq!(m, generate_mask(256, 5.0, 10, DEFAULT_SIGMA_FRAC, 3).unwrap());
        assert_ne!(m, generate_mask(256, 5.0, 10, DEFAULT_SIGMA_FRAC, 4).unwrap());
    }

    #[test]
    fn invalid_mask_parameters() {
        assert!(generate_mask(64, 0.5, 0, 0.15, 0).is_err());
        assert!(generate_mask(64, f64::NAN, 0, 0.15, 0).is_err());
        assert!(generate_mask(64, 5.0, 13, 0.15, 0).is_err());
        assert!(generate_mask(64, 5.0, 12, 0.15, 0).is_ok());
        assert!(generate_mask(64, 4.0, 4, 0.0, 0).is_err());
    }

    #[test]
    fn undersample_extremes() {
        let x = ComplexGrid::from_real(&random_image(8, 8, 1)).unwrap();
        let full = full_mask(8);
        assert_eq!(undersample(&x, &full).unwrap(), fft2c(&x));
        let empty = SamplingMask::from_rows(vec![false; 8], full.meta().clone()).unwrap();
        let y = undersample(&x, &empty).unwrap();
        assert!(y.re().iter().chain(y.im()).all(|&v| v == 0.0));
        assert!(zero_filled(&y, &empty).unwrap().norm() == 0.0);
        let m = generate_mask(8, 2.0, 2, 0.15, 5).unwrap();
        assert!(undersample(&x, &m).unwrap().norm() <= fft2c(&x).norm() + 1e-12);
        assert!(undersample(&x, &generate_mask(16, 2.0, 2, 0.15, 5).unwrap()).is_err());
    }

    #[test]
    fn full_mask_round_trip() {
        let img = random_image(16, 16, 2).cast::<f32>();
        let (_, xu) = acquire(&img, &full_mask(16)).unwrap();
        assert!(xu.max_abs_diff(&img).unwrap() < 1e-4);
    }

    #[test]
    fn zero_filled_matches_direct_dft_oracle() {
        // Even-symmetric real phantom: a centered bright square.
        let img = Tensor::<f64>::from_fn(&[8, 8], |i| {
            let (r, c) = (i / 8, i % 8);
            if (2..=6).contains(&r) && (2..=6).contains(&c) {
                1.0
            } else {
                0.0
            }
        });
        let m = SamplingMask::from_rows(
            vec![false, true, false, true, true, true, false, false],
            full_mask(8).meta().clone(),
        )
        .unwrap();
        let xz = zero_filled(&undersample(&ComplexGrid::from_real(&img).unwrap(), &m).unwrap(), &m).unwrap();

        // Direct centered DFT, mask, direct inverse, O(N^4).
        let n = 8usize;
        let c0 = 4.0;
        let phase = |a: usize, b: usize| (a as f64 - c0) * (b as f64 - c0) / n as f64;
        let mut k = vec![Complex::new(0.0, 0.0); n * n];
        for u in 0..n {
            for v in 0..n {
                if !m.is_kept(u) {
                    continue;
                }
                for r in 0..n {
                    for c in 0..n {
                        let th = -2.0 * core::f64::consts::PI * (phase(u, r) + phase(v, c));
                        k[u * n + v] += Complex::new(th.cos(), th.sin()) * img.data()[r * n + c];
                    }
                }
                k[u * n + v] /= n as f64;
            }
        }
        let mut aliasing = 0.0f64;
        for r in 0..n {
            for c in 0..n {
                let mut acc = Complex::new(0.0, 0.0);
                for u in 0..n {
                    for v in 0..n {
                        let th = 2.0 * core::f64::consts::PI * (phase(u, r) + phase(v, c));
                        acc += k[u * n + v] * Complex::new(th.cos(), th.sin());
                    }
                }
                acc /= n as f64;
                assert!((acc - xz.get(r, c)).norm() < 1e-10);
                aliasing = aliasing.max((acc.re - img.data()[r * n + c]).abs());
            }
        }
        assert!(aliasing > 1e-3, "undersampling should alias");
    }

    #[test]
    fn fidelity_limits() {
        let target = random_image(16, 16, 3);
        let m = generate_mask(16, 4.0, 2, 0.15, 1).unwrap();
        let (y, xu) = acquire(&target, &m).unwrap();
        let pred = random_image(16, 16, 4);

        let hard = FidelityConfig::default();
        let out = data_fidelity(&pred, &y, &m, &hard).unwrap();
        let k_out = fft2c(&ComplexGrid::from_real(&out).unwrap());
        let k_pred = fft2c(&ComplexGrid::from_real(&pred).unwrap());
        for r in 0..16 {
            for c in 0..16 {
                if m.is_kept(r) {
                    assert!((k_out.get(r, c) - y.get(r, c)).norm() < 1e-10);
                } else if !m.conjugate_closure()[r] {
                    assert!((k_out.get(r, c) - k_pred.get(r, c)).norm() < 1e-10);
                }
            }
        }
        let twice = data_fidelity(&out, &y, &m, &hard).unwrap();
        assert!(twice.max_abs_diff(&out).unwrap() < 1e-10);

        let none = FidelityConfig {
            lambda: Lambda::Finite(0.0),
            alpha: 0.0,
        };
        assert!(data_fidelity(&pred, &y, &m, &none).unwrap().max_abs_diff(&pred).unwrap() < 1e-10);

        // The zero-filled image is already consistent with y.
        assert!(data_fidelity(&xu, &y, &m, &hard).unwrap().max_abs_diff(&xu).unwrap() < 1e-10);
    }

    #[test]
    fn finite_lambda_blend() {
        let m = generate_mask(8, 2.0, 2, 0.15, 1).unwrap();
        let (y, _) = acquire(&random_image(8, 8, 5), &m).unwrap();
        let pred = random_image(8, 8, 6);
        let cfg = FidelityConfig {
            lambda: Lambda::Finite(1.0),
            alpha: 0.0,
        };
        let out = data_fidelity(&pred, &y, &m, &cfg).unwrap();
        let k_pred = fft2c(&ComplexGrid::from_real(&pred).unwrap());
        let k_out = fft2c(&ComplexGrid::from_real(&out).unwrap());
        for r in (0..8).filter(|&r| m.is_kept(r)) {
            for c in 0..8 {
                let expect = (k_pred.get(r, c) + y.get(r, c)) / 2.0;
                assert!((k_out.get(r, c) - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn fidelity_shape_errors() {
        let m = generate_mask(8, 2.0, 2, 0.15, 1).unwrap();
        let y = ComplexGrid::<f64>::zeros(8, 8);
        let bad = Tensor::<f64>::zeros(&[8, 4]);
        assert!(data_fidelity(&bad, &y, &m, &FidelityConfig::default()).is_err());
        let cfg = FidelityConfig {
            lambda: Lambda::Finite(-1.0),
            alpha: 0.0,
        };
        assert!(data_fidelity(&Tensor::zeros(&[8, 8]), &y, &m, &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mask_row_count_and_center(h in 8usize..300, accel in 1.0f64..8.0, seed in any::<u64>(), frac in 0.0f64..1.0) {
            let budget = (h as f64 / accel).floor() as usize;
            let center = (frac * budget as f64) as usize;
            let m = generate_mask(h, accel, center, DEFAULT_SIGMA_FRAC, seed).unwrap();
            prop_assert_eq!(m.kept_count(), kept_row_count(h, accel));
            for &i in rows_by_distance_from_dc(h).iter().take(center) {
                prop_assert!(m.is_kept(i));
            }
            let frac_kept = m.kept_count() as f64 / h as f64;
            prop_assert!((frac_kept - 1.0 / accel).abs() <= 1.0 / h as f64 + 1e-12);
        }
    }
}
