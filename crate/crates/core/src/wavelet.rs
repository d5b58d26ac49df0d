//! Orthonormal 2D Haar transform.
//!
//! Every non-overlapping 2x2 block `[[a, b], [c, d]]` maps to four
//! coefficients scaled by 1/2, which makes the transform orthonormal:
//!
//! ```text
//! ll = (a + b + c + d) / 2     lh = (a + b - c - d) / 2
//! hl = (a - b + c - d) / 2     hh = (a - b - c + d) / 2
//! ```
//!
//! The inverse is the transpose. Multi-level decompositions inside the
//! network re-decompose every stacked subband (packet layout), so the layer
//! form stacks subbands along channels as `LL | LH | HL | HH` blocks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// The four subbands of one decomposition level.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet<T = f32> {
    /// Approximation.
    pub ll: Tensor<T>,
    /// Horizontal detail.
    pub lh: Tensor<T>,
    /// Vertical detail.
    pub hl: Tensor<T>,
    /// Diagonal detail.
    pub hh: Tensor<T>,
}

impl<T: Real> SubbandSet<T> {
    pub fn bands(&self) -> [&Tensor<T>; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    /// Sum of squared coefficients over all four bands.
    pub fn energy(&self) -> T {
        self.bands()
            .iter()
            .map(|b| b.data().iter().map(|&v| v * v).sum::<T>())
            .sum()
    }
}

#[inline]
fn analyze<T: Real>(a: T, b: T, c: T, d: T) -> [T; 4] {
    let half = T::from_f64_lossy(0.5);
    [
        (a + b + c + d) * half,
        (a + b - c - d) * half,
        (a - b + c - d) * half,
        (a - b - c + d) * half,
    ]
}

#[inline]
fn synthesize<T: Real>(ll: T, lh: T, hl: T, hh: T) -> [T; 4] {
    let half = T::from_f64_lossy(0.5);
    [
        (ll + lh + hl + hh) * half,
        (ll + lh - hl - hh) * half,
        (ll - lh + hl - hh) * half,
        (ll - lh - hl + hh) * half,
    ]
}

fn check_even(op: &'static str, h: usize, w: usize) -> Result<()> {
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(Error::OddDimensions {
            op,
            height: h,
            width: w,
        });
    }
    Ok(())
}

/// Forward transform of one plane, writing each band into its own slice.
fn analyze_plane<T: Real>(src: &[T], h: usize, w: usize, out: [&mut [T]; 4]) {
    let [ll, lh, hl, hh] = out;
    let (oh, ow) = (h / 2, w / 2);
    for i in 0..oh {
        let r0 = &src[2 * i * w..(2 * i + 1) * w];
        let r1 = &src[(2 * i + 1) * w..(2 * i + 2) * w];
        for j in 0..ow {
            let k = i * ow + j;
            let [x0, x1, x2, x3] = analyze(r0[2 * j], r0[2 * j + 1], r1[2 * j], r1[2 * j + 1]);
            ll[k] = x0;
            lh[k] = x1;
            hl[k] = x2;
            hh[k] = x3;
        }
    }
}

/// Inverse transform into a plane of size `2*oh x 2*ow`.
fn synthesize_plane<T: Real>(bands: [&[T]; 4], oh: usize, ow: usize, dst: &mut [T]) {
    let [ll, lh, hl, hh] = bands;
    let w = 2 * ow;
    for i in 0..oh {
        for j in 0..ow {
            let k = i * ow + j;
            let [a, b, c, d] = synthesize(ll[k], lh[k], hl[k], hh[k]);
            dst[2 * i * w + 2 * j] = a;
            dst[2 * i * w + 2 * j + 1] = b;
            dst[(2 * i + 1) * w + 2 * j] = c;
            dst[(2 * i + 1) * w + 2 * j + 1] = d;
        }
    }
}

/// Single-level Haar analysis applied to every plane of `x` (rank >= 2).
pub fn dwt2_haar<T: Real>(x: &Tensor<T>) -> Result<SubbandSet<T>> {
    let (planes, h, w) = x.plane_dims("dwt2_haar")?;
    check_even("dwt2_haar", h, w)?;
    let (oh, ow) = (h / 2, w / 2);
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    let per = oh * ow;
    let mut bands: [Vec<T>; 4] = core::array::from_fn(|_| vec![T::zero(); planes * per]);
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let [b0, b1, b2, b3] = &mut bands;
        analyze_plane(
            src,
            h,
            w,
            [
                &mut b0[p * per..(p + 1) * per],
                &mut b1[p * per..(p + 1) * per],
                &mut b2[p * per..(p + 1) * per],
                &mut b3[p * per..(p + 1) * per],
            ],
        );
    }
    let [ll, lh, hl, hh] = bands;
    Ok(SubbandSet {
        ll: Tensor::new(&shape, ll)?,
        lh: Tensor::new(&shape, lh)?,
        hl: Tensor::new(&shape, hl)?,
        hh: Tensor::new(&shape, hh)?,
    })
}

/// Exact inverse of [`dwt2_haar`].
pub fn iwt2_haar<T: Real>(s: &SubbandSet<T>) -> Result<Tensor<T>> {
    for b in [&s.lh, &s.hl, &s.hh] {
        if b.shape() != s.ll.shape() {
            return Err(shape_err(
                "iwt2_haar",
                format!("subband {:?} vs ll {:?}", b.shape(), s.ll.shape()),
            ));
        }
    }
    let (planes, oh, ow) = s.ll.plane_dims("iwt2_haar")?;
    let mut shape = s.ll.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = 2 * oh;
    shape[r - 1] = 2 * ow;
    let per = oh * ow;
    let mut out = vec![T::zero(); planes * per * 4];
    for p in 0..planes {
        let r = p * per..(p + 1) * per;
        synthesize_plane(
            [
                &s.ll.data()[r.clone()],
                &s.lh.data()[r.clone()],
                &s.hl.data()[r.clone()],
                &s.hh.data()[r],
            ],
            oh,
            ow,
            &mut out[p * per * 4..(p + 1) * per * 4],
        );
    }
    Tensor::new(&shape, out)
}

/// Layer form: `[N, C, H, W] -> [N, 4C, H/2, W/2]` with channel blocks
/// `LL | LH | HL | HH`.
pub fn dwt_stacked<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("dwt_layer")?;
    check_even("dwt_layer", h, w)?;
    let (oh, ow) = (h / 2, w / 2);
    let per = oh * ow;
    let mut out = vec![T::zero(); n * 4 * c * per];
    for b in 0..n {
        let sample = &mut out[b * 4 * c * per..(b + 1) * 4 * c * per];
        let (ll, rest) = sample.split_at_mut(c * per);
        let (lh, rest) = rest.split_at_mut(c * per);
        let (hl, hh) = rest.split_at_mut(c * per);
        for ch in 0..c {
            let src = &x.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            let r = ch * per..(ch + 1) * per;
            analyze_plane(
                src,
                h,
                w,
                [
                    &mut ll[r.clone()],
                    &mut lh[r.clone()],
                    &mut hl[r.clone()],
                    &mut hh[r],
                ],
            );
        }
    }
    Tensor::new(&[n, 4 * c, oh, ow], out)
}

/// Layer form inverse: `[N, 4C, H, W] -> [N, C, 2H, 2W]`.
pub fn iwt_stacked<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c4, oh, ow] = x.dims4("iwt_layer")?;
    if c4 % 4 != 0 {
        return Err(shape_err(
            "iwt_layer",
            format!("channel count {c4} is not divisible by 4"),
        ));
    }
    let c = c4 / 4;
    let per = oh * ow;
    let (h, w) = (2 * oh, 2 * ow);
    let mut out = vec![T::zero(); n * c * h * w];
    for b in 0..n {
        let sample = &x.data()[b * c4 * per..(b + 1) * c4 * per];
        for ch in 0..c {
            let band = |k: usize| &sample[(k * c + ch) * per..(k * c + ch + 1) * per];
            synthesize_plane(
                [band(0), band(1), band(2), band(3)],
                oh,
                ow,
                &mut out[(b * c + ch) * h * w..(b * c + ch + 1) * h * w],
            );
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn hand_evaluated_block() {
        let s = dwt2_haar(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(s.ll.data(), &[5.0]);
        assert_eq!(s.lh.data(), &[-2.0]);
        assert_eq!(s.hl.data(), &[-1.0]);
        assert_eq!(s.hh.data(), &[0.0]);
        assert_eq!(s.energy(), 30.0);
    }

    #[test]
    fn constant_image_has_no_detail() {
        let v = 0.37;
        let s = dwt2_haar(&t(&[2, 2], &[v; 4])).unwrap();
        assert_eq!(s.ll.data(), &[2.0 * v]);
        for b in [&s.lh, &s.hl, &s.hh] {
            assert_eq!(b.data(), &[0.0]);
        }
        let big = Tensor::<f32>::full(&[1, 3, 8, 6], 1.25);
        let s = dwt2_haar(&big).unwrap();
        assert!(s.lh.data().iter().chain(s.hl.data()).chain(s.hh.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn inverse_of_constant_case() {
        let one = t(&[1, 1], &[2.0]);
        let zero = t(&[1, 1], &[0.0]);
        let s = SubbandSet {
            ll: one,
            lh: zero.clone(),
            hl: zero.clone(),
            hh: zero.clone(),
        };
        assert_eq!(iwt2_haar(&s).unwrap().data(), &[1.0; 4]);
        let z = SubbandSet {
            ll: zero.clone(),
            lh: zero.clone(),
            hl: zero.clone(),
            hh: zero,
        };
        assert_eq!(iwt2_haar(&z).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn odd_dimensions_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]);
        assert!(matches!(dwt2_haar(&x), Err(Error::OddDimensions { .. })));
        assert!(matches!(dwt_stacked(&x), Err(Error::OddDimensions { .. })));
    }

    #[test]
    fn mismatched_subbands_rejected() {
        let s = SubbandSet {
            ll: Tensor::<f32>::zeros(&[2, 2]),
            lh: Tensor::zeros(&[2, 2]),
            hl: Tensor::zeros(&[2, 3]),
            hh: Tensor::zeros(&[2, 2]),
        };
        assert!(iwt2_haar(&s).is_err());
    }

    #[test]
    fn layer_shapes_and_ordering() {
        let x = Tensor::<f32>::ones(&[1, 1, 2, 2]);
        let y = dwt_stacked(&x).unwrap();
        assert_eq!(y.shape(), &[1, 4, 1, 1]);
        assert_eq!(y.data(), &[2.0, 0.0, 0.0, 0.0]);

        let x = Tensor::<f32>::zeros(&[1, 16, 32, 32]);
        assert_eq!(dwt_stacked(&x).unwrap().shape(), &[1, 64, 16, 16]);
        let x = Tensor::<f32>::zeros(&[1, 64, 16, 16]);
        let y = iwt_stacked(&x).unwrap();
        assert_eq!(y.shape(), &[1, 16, 32, 32]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(iwt_stacked(&Tensor::<f32>::zeros(&[1, 6, 2, 2])).is_err());
    }

    #[test]
    fn stacked_matches_subband_blocks() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4, 4], |i| (i as f64 * 0.37).sin());
        let s = dwt2_haar(&x).unwrap();
        let y = dwt_stacked(&x).unwrap();
        let per = 3 * 4;
        for b in 0..2 {
            let sample = &y.data()[b * 4 * per..(b + 1) * 4 * per];
            for (k, band) in s.bands().iter().enumerate() {
                assert_eq!(&sample[k * per..(k + 1) * per], &band.data()[b * per..(b + 1) * per]);
            }
        }
    }

    fn arb_tensor(shape: [usize; 4]) -> impl Strategy<Value = Tensor<f64>> {
        let len = shape.iter().product::<usize>();
        prop::collection::vec(-1.0f64..1.0, len).prop_map(move |v| Tensor::new(&shape, v).unwrap())
    }

    proptest! {
        #[test]
        fn perfect_reconstruction_and_energy(x in arb_tensor([1, 2, 8, 8])) {
            let s = dwt2_haar(&x).unwrap();
            let back = iwt2_haar(&s).unwrap();
            prop_assert!(back.max_abs_diff(&x).unwrap() <= 1e-12);
            let e_in: f64 = x.data().iter().map(|v| v * v).sum();
            prop_assert!((s.energy() - e_in).abs() <= 1e-12 * e_in.max(1.0));

            let y = dwt_stacked(&x).unwrap();
            prop_assert!(iwt_stacked(&y).unwrap().max_abs_diff(&x).unwrap() <= 1e-12);
        }

        #[test]
        fn layer_round_trip_both_ways(x in arb_tensor([1, 8, 4, 4])) {
            let xf = x.cast::<f32>();
            prop_assert!(dwt_stacked(&iwt_stacked(&xf).unwrap()).unwrap().max_abs_diff(&xf).unwrap() <= 1e-5);
            prop_assert!(iwt_stacked(&dwt_stacked(&xf).unwrap()).unwrap().max_abs_diff(&xf).unwrap() <= 1e-5);
        }

        #[test]
        fn adjoint_and_linearity(x in arb_tensor([1, 1, 4, 6]), g in arb_tensor([1, 4, 2, 3]), a in -2.0f64..2.0) {
            let lhs = dwt_stacked(&x).unwrap().dot(&g).unwrap();
            let rhs = x.dot(&iwt_stacked(&g).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10);

            let y = iwt_stacked(&g).unwrap();
            let combo = x.zip_map(&y, |p, q| a * p + q).unwrap();
            let expect = dwt_stacked(&x).unwrap().zip_map(&dwt_stacked(&y).unwrap(), |p, q| a * p + q).unwrap();
            prop_assert!(dwt_stacked(&combo).unwrap().max_abs_diff(&expect).unwrap() <= 1e-12);
        }
    }
}
