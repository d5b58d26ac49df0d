//! 3x3, stride 1, zero-padding 1 convolution via im2col and GEMM.

use alloc::vec;
use alloc::vec::Vec;

use crate::parallel::map_indexed;
use crate::real::{Layout, Real};
use crate::tensor::Tensor;

/// Unfolds one `[cin, h, w]` sample into a `[cin*9, h*w]` patch matrix.
fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(c * 9 + ky * 3 + kx) * hw..(c * 9 + ky * 3 + kx + 1) * hw];
                for oy in 0..h {
                    let dst = &mut row[oy * w..(oy + 1) * w];
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds patch gradients back into `dx` (accumulating).
fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for c in 0..cin {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(c * 9 + ky * 3 + kx) * hw..(c * 9 + ky * 3 + kx + 1) * hw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &row[oy * w..(oy + 1) * w];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
}

/// Dimensions shared by forward and backward.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

pub(crate) fn forward<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, d: ConvDims) -> Tensor<T> {
    let ConvDims { n, cin, cout, h, w } = d;
    let hw = h * w;
    let k = cin * 9;
    let samples = map_indexed(n, |b| {
        let mut cols = vec![T::zero(); k * hw];
        im2col(&x.data()[b * cin * hw..(b + 1) * cin * hw], cin, h, w, &mut cols);
        let mut out = vec![T::zero(); cout * hw];
        for (o, row) in out.chunks_exact_mut(hw).enumerate() {
            row.fill(bias.data()[o]);
        }
        T::gemm(
            cout,
            k,
            hw,
            T::one(),
            weight.data(),
            Layout::RowMajor,
            &cols,
            Layout::RowMajor,
            T::one(),
            &mut out,
        );
        out
    });
    let data: Vec<T> = samples.into_iter().flatten().collect();
    Tensor::new(&[n, cout, h, w], data).expect("conv output extents")
}

/// Returns `(dx, dweight, dbias)`; `dx` is skipped when `need_dx` is false.
pub(crate) fn backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dout: &Tensor<T>,
    d: ConvDims,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let ConvDims { n, cin, cout, h, w } = d;
    let hw = h * w;
    let k = cin * 9;
    let per_sample = map_indexed(n, |b| {
        let g = &dout.data()[b * cout * hw..(b + 1) * cout * hw];
        let mut cols = vec![T::zero(); k * hw];
        im2col(&x.data()[b * cin * hw..(b + 1) * cin * hw], cin, h, w, &mut cols);
        let mut dw = vec![T::zero(); cout * k];
        T::gemm(
            cout,
            hw,
            k,
            T::one(),
            g,
            Layout::RowMajor,
            &cols,
            Layout::Transposed,
            T::zero(),
            &mut dw,
        );
        let db: Vec<T> = g.chunks_exact(hw).map(|r| r.iter().copied().sum()).collect();
        let dx = need_dx.then(|| {
            // Reuse the patch buffer for the patch gradients.
            T::gemm(
                k,
                cout,
                hw,
                T::one(),
                weight.data(),
                Layout::Transposed,
                g,
                Layout::RowMajor,
                T::zero(),
                &mut cols,
            );
            let mut dx = vec![T::zero(); cin * hw];
            col2im(&cols, cin, h, w, &mut dx);
            dx
        });
        (dx, dw, db)
    });

    let mut dweight = Tensor::zeros(&[cout, cin, 3, 3]);
    let mut dbias = Tensor::zeros(&[cout]);
    let mut dx_data = need_dx.then(|| Vec::with_capacity(n * cin * hw));
    for (dx, dw, db) in per_sample {
        dweight
            .data_mut()
            .iter_mut()
            .zip(&dw)
            .for_each(|(a, &b)| *a += b);
        dbias
            .data_mut()
            .iter_mut()
            .zip(&db)
            .for_each(|(a, &b)| *a += b);
        if let (Some(acc), Some(dx)) = (dx_data.as_mut(), dx) {
            acc.extend_from_slice(&dx);
        }
    }
    let dx = dx_data.map(|v| Tensor::new(&[n, cin, h, w], v).expect("conv input extents"));
    (dx, dweight, dbias)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct sliding-window convolution.
    fn naive(x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let [n, cin, h, w] = x.dims4("t").unwrap();
        let cout = wt.shape()[0];
        let mut out = Tensor::zeros(&[n, cout, h, w]);
        for s in 0..n {
            for o in 0..cout {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = b.data()[o];
                        for c in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = y as isize + ky as isize - 1;
                                    let ix = xx as isize + kx as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += wt.data()[((o * cin + c) * 3 + ky) * 3 + kx]
                                        * x.data()[((s * cin + c) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out.data_mut()[((s * cout + o) * h + y) * w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_sliding_window() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 5, 4], |i| ((i * 7919) % 23) as f64 / 11.0 - 1.0);
        let wt = Tensor::<f64>::from_fn(&[4, 3, 3, 3], |i| ((i * 104729) % 17) as f64 / 8.0 - 1.0);
        let b = Tensor::<f64>::from_fn(&[4], |i| i as f64 * 0.1);
        let d = ConvDims { n: 2, cin: 3, cout: 4, h: 5, w: 4 };
        let fast = forward(&x, &wt, &b, d);
        assert!(fast.max_abs_diff(&naive(&x, &wt, &b)).unwrap() < 1e-12);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (cin, h, w) = (2, 4, 3);
        let x: Vec<f64> = (0..cin * h * w).map(|i| (i as f64 * 0.3).sin()).collect();
        let g: Vec<f64> = (0..cin * 9 * h * w).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut cols = vec![0.0; g.len()];
        im2col(&x, cin, h, w, &mut cols);
        let lhs: f64 = cols.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut dx = vec![0.0; x.len()];
        col2im(&g, cin, h, w, &mut dx);
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
