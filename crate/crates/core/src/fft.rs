//! Centered, orthonormally scaled 2D discrete Fourier transform.
//!
//! DC sits at index `(h/2, w/2)` after the transform. Power-of-two lengths use
//! an iterative radix-2 kernel; other lengths fall back to a direct DFT.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex;

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Complex 2D grid held as separate real and imaginary planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid<T = f32> {
    height: usize,
    width: usize,
    re: Vec<T>,
    im: Vec<T>,
}

impl<T: Real> ComplexGrid<T> {
    pub fn new(height: usize, width: usize, re: Vec<T>, im: Vec<T>) -> Result<Self> {
        if re.len() != height * width || im.len() != height * width {
            return Err(shape_err(
                "complex_grid",
                format!(
                    "{height}x{width} needs {} values per plane, got re={} im={}",
                    height * width,
                    re.len(),
                    im.len()
                ),
            ));
        }
        Ok(Self {
            height,
            width,
            re,
            im,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            re: vec![T::zero(); height * width],
            im: vec![T::zero(); height * width],
        }
    }

    /// Embeds a single real plane (any rank >= 2 holding exactly one plane)
    /// with zero imaginary part.
    pub fn from_real(x: &Tensor<T>) -> Result<Self> {
        let (planes, h, w) = x.plane_dims("complex_grid")?;
        if planes != 1 {
            return Err(shape_err(
                "complex_grid",
                format!("expected a single plane, got shape {:?}", x.shape()),
            ));
        }
        Ok(Self {
            height: h,
            width: w,
            re: x.data().to_vec(),
            im: vec![T::zero(); h * w],
        })
    }

    fn from_complex(height: usize, width: usize, v: &[Complex<T>]) -> Self {
        Self {
            height,
            width,
            re: v.iter().map(|c| c.re).collect(),
            im: v.iter().map(|c| c.im).collect(),
        }
    }

    fn to_complex(&self) -> Vec<Complex<T>> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&re, &im)| Complex::new(re, im))
            .collect()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn re(&self) -> &[T] {
        &self.re
    }

    pub fn im(&self) -> &[T] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [T] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [T] {
        &mut self.im
    }

    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        let i = row * self.width + col;
        Complex::new(self.re[i], self.im[i])
    }

    pub fn set(&mut self, row: usize, col: usize, v: Complex<T>) {
        let i = row * self.width + col;
        self.re[i] = v.re;
        self.im[i] = v.im;
    }

    /// Real plane as an `[h, w]` tensor.
    pub fn real_part(&self) -> Tensor<T> {
        Tensor::new(&[self.height, self.width], self.re.clone()).expect("extents checked")
    }

    pub fn norm(&self) -> T {
        self.re
            .iter()
            .chain(&self.im)
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!((self.height, self.width), (other.height, other.width));
        self.re
            .iter()
            .zip(&other.re)
            .chain(self.im.iter().zip(&other.im))
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if (self.height, self.width) == (other.height, other.width) {
            Ok(())
        } else {
            Err(shape_err(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.height, self.width, other.height, other.width
                ),
            ))
        }
    }
}

/// Precomputed twiddles for one transform length.
struct Plan<T> {
    n: usize,
    twiddles: Vec<Complex<T>>,
}

impl<T: Real> Plan<T> {
    fn new(n: usize) -> Self {
        let twiddles = (0..n)
            .map(|k| {
                let theta = -2.0 * PI * k as f64 / n as f64;
                Complex::new(
                    T::from_f64_lossy(libm::cos(theta)),
                    T::from_f64_lossy(libm::sin(theta)),
                )
            })
            .collect();
        Self { n, twiddles }
    }

    #[inline]
    fn twiddle(&self, k: usize, inverse: bool) -> Complex<T> {
        let t = self.twiddles[k % self.n];
        if inverse {
            t.conj()
        } else {
            t
        }
    }

    /// Unnormalized transform in place. `scratch` must hold `n` elements.
    fn run(&self, buf: &mut [Complex<T>], scratch: &mut [Complex<T>], inverse: bool) {
        let n = self.n;
        if n <= 1 {
            return;
        }
        if n.is_power_of_two() {
            let bits = n.trailing_zeros();
            for i in 0..n {
                let j = i.reverse_bits() >> (usize::BITS - bits);
                if i < j {
                    buf.swap(i, j);
                }
            }
            let mut len = 2;
            while len <= n {
                let stride = n / len;
                for start in (0..n).step_by(len) {
                    for k in 0..len / 2 {
                        let w = self.twiddle(k * stride, inverse);
                        let u = buf[start + k];
                        let v = buf[start + k + len / 2] * w;
                        buf[start + k] = u + v;
                        buf[start + k + len / 2] = u - v;
                    }
                }
                len <<= 1;
            }
        } else {
            for (k, out) in scratch.iter_mut().enumerate().take(n) {
                let mut acc = Complex::new(T::zero(), T::zero());
                for (j, &x) in buf.iter().enumerate() {
                    acc += x * self.twiddle(j * k, inverse);
                }
                *out = acc;
            }
            buf.copy_from_slice(&scratch[..n]);
        }
    }
}

/// out[(r + dr) % h][(c + dc) % w] = x[r][c]
fn roll<T: Copy>(x: &[T], h: usize, w: usize, dr: usize, dc: usize) -> Vec<T> {
    let mut out = x.to_vec();
    for r in 0..h {
        let rr = (r + dr) % h;
        for c in 0..w {
            out[rr * w + (c + dc) % w] = x[r * w + c];
        }
    }
    out
}

fn transform2d<T: Real>(data: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    let row_plan = Plan::new(w);
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); h.max(w)];
    for row in data.chunks_exact_mut(w) {
        row_plan.run(row, &mut scratch, inverse);
    }
    let col_plan = Plan::new(h);
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = data[r * w + c];
        }
        col_plan.run(&mut col, &mut scratch, inverse);
        for r in 0..h {
            data[r * w + c] = col[r];
        }
    }
}

fn centered<T: Real>(x: &ComplexGrid<T>, inverse: bool) -> ComplexGrid<T> {
    let (h, w) = (x.height, x.width);
    let mut buf = roll(&x.to_complex(), h, w, h - h / 2, w - w / 2);
    transform2d(&mut buf, h, w, inverse);
    let mut buf = roll(&buf, h, w, h / 2, w / 2);
    let scale = T::from_f64_lossy(1.0 / libm::sqrt((h * w) as f64));
    for v in &mut buf {
        *v *= scale;
    }
    ComplexGrid::from_complex(h, w, &buf)
}

/// Centered orthonormal forward 2D DFT.
pub fn fft2c<T: Real>(x: &ComplexGrid<T>) -> ComplexGrid<T> {
    centered(x, false)
}

/// Centered orthonormal inverse 2D DFT.
pub fn ifft2c<T: Real>(x: &ComplexGrid<T>) -> ComplexGrid<T> {
    centered(x, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(h: usize, w: usize, seed: u64) -> ComplexGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let re = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let im = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ComplexGrid::new(h, w, re, im).unwrap()
    }

    /// O(N^4) centered DFT straight from the definition.
    pub(crate) fn direct_fft2c(x: &ComplexGrid<f64>, inverse: bool) -> ComplexGrid<f64> {
        let (h, w) = (x.height(), x.width());
        let sign = if inverse { 1.0 } else { -1.0 };
        let mut out = ComplexGrid::zeros(h, w);
        let (ch, cw) = ((h / 2) as f64, (w / 2) as f64);
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let ph = sign
                            * 2.0
                            * PI
                            * ((u as f64 - ch) * (r as f64 - ch) / h as f64
                                + (v as f64 - cw) * (c as f64 - cw) / w as f64);
                        acc += x.get(r, c) * Complex::new(ph.cos(), ph.sin());
                    }
                }
                out.set(u, v, acc / ((h * w) as f64).sqrt());
            }
        }
        out
    }

    #[test]
    fn centered_impulse_is_flat() {
        let mut x = ComplexGrid::<f64>::zeros(4, 4);
        x.set(2, 2, Complex::new(1.0, 0.0));
        let y = fft2c(&x);
        for r in 0..4 {
            for c in 0..4 {
                assert!((y.get(r, c).norm() - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn agrees_with_direct_dft() {
        for (h, w, seed) in [(8, 8, 1), (6, 8, 2), (5, 7, 3)] {
            let x = random_grid(h, w, seed);
            assert!(fft2c(&x).max_abs_diff(&direct_fft2c(&x, false)) < 1e-10);
            assert!(ifft2c(&x).max_abs_diff(&direct_fft2c(&x, true)) < 1e-10);
        }
    }

    #[test]
    fn parseval_and_round_trip() {
        let x = random_grid(16, 16, 9);
        let y = fft2c(&x);
        assert!((y.norm() - x.norm()).abs() / x.norm() < 1e-12);
        assert!(ifft2c(&y).max_abs_diff(&x) < 1e-12);

        let xf = ComplexGrid::<f32>::new(
            16,
            16,
            x.re().iter().map(|&v| v as f32).collect(),
            x.im().iter().map(|&v| v as f32).collect(),
        )
        .unwrap();
        let yf = fft2c(&xf);
        assert!(((yf.norm() - xf.norm()) / xf.norm()).abs() < 1e-5);
        assert!(ifft2c(&yf).max_abs_diff(&xf) < 1e-4);
    }
}
