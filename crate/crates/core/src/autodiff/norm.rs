//! Per-channel batch normalization kernels over `(N, H, W)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;
use crate::tensor::Tensor;

pub(crate) struct NormForward<T> {
    pub out: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and unbiased batch variance; empty in eval mode.
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

fn channel_iter<'a, T: Copy>(
    data: &'a [T],
    dims: [usize; 4],
    ch: usize,
) -> impl Iterator<Item = &'a [T]> + 'a {
    let [n, c, h, w] = dims;
    let hw = h * w;
    (0..n).map(move |b| &data[(b * c + ch) * hw..(b * c + ch + 1) * hw])
}

fn apply<T: Real>(
    x: &Tensor<T>,
    dims: [usize; 4],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    inv_std: &[T],
) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            let src = &x.data()[r.clone()];
            let (m, s, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for ((xh, o), &v) in xhat.data_mut()[r.clone()]
                .iter_mut()
                .zip(&mut out.data_mut()[r])
                .zip(src)
            {
                *xh = (v - m) * s;
                *o = g * *xh + bt;
            }
        }
    }
    (out, xhat)
}

pub(crate) fn forward_train<T: Real>(
    x: &Tensor<T>,
    dims: [usize; 4],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> NormForward<T> {
    let [n, c, h, w] = dims;
    let count = (n * h * w) as f64;
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let mut unbiased = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = 0.0f64;
        for plane in channel_iter(x.data(), dims, ch) {
            s += plane.iter().map(|v| v.to_f64_lossy()).sum::<f64>();
        }
        let m = s / count;
        let mut ss = 0.0f64;
        for plane in channel_iter(x.data(), dims, ch) {
            ss += plane
                .iter()
                .map(|v| {
                    let d = v.to_f64_lossy() - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = T::from_f64_lossy(m);
        var[ch] = T::from_f64_lossy(ss / count);
        unbiased[ch] = T::from_f64_lossy(ss / (count - 1.0));
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (out, xhat) = apply(x, dims, gamma, beta, &mean, &inv_std);
    NormForward {
        out,
        xhat,
        inv_std,
        batch_mean: mean,
        batch_var: unbiased,
    }
}

pub(crate) fn forward_eval<T: Real>(
    x: &Tensor<T>,
    dims: [usize; 4],
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> NormForward<T> {
    let inv_std: Vec<T> = running_var
        .iter()
        .map(|&v| T::one() / (v + eps).sqrt())
        .collect();
    let (out, xhat) = apply(x, dims, gamma, beta, running_mean, &inv_std);
    NormForward {
        out,
        xhat,
        inv_std,
        batch_mean: Vec::new(),
        batch_var: Vec::new(),
    }
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn backward<T: Real>(
    dy: &Tensor<T>,
    xhat: &Tensor<T>,
    inv_std: &[T],
    gamma: &[T],
    dims: [usize; 4],
    train: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let count = T::from_usize(n * hw).expect("count fits");
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let mut dx = Tensor::zeros(dy.shape());
    for ch in 0..c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for b in 0..n {
            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for (&g, &xh) in dy.data()[r.clone()].iter().zip(&xhat.data()[r]) {
                sum_dy += g.to_f64_lossy();
                sum_dy_xhat += (g * xh).to_f64_lossy();
            }
        }
        dgamma.data_mut()[ch] = T::from_f64_lossy(sum_dy_xhat);
        dbeta.data_mut()[ch] = T::from_f64_lossy(sum_dy);
        let scale = gamma[ch] * inv_std[ch];
        let mean_dy = T::from_f64_lossy(sum_dy) / count;
        let mean_dy_xhat = T::from_f64_lossy(sum_dy_xhat) / count;
        for b in 0..n {
            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            let xh = &xhat.data()[r.clone()];
            let g = &dy.data()[r.clone()];
            for ((d, &gv), &xv) in dx.data_mut()[r].iter_mut().zip(g).zip(xh) {
                *d = if train {
                    scale * (gv - mean_dy - xv * mean_dy_xhat)
                } else {
                    scale * gv
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}
