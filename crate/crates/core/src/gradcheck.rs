//! Central finite differences, used as the independent gradient oracle.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::error::Result;
use crate::fft::ComplexGrid;
use crate::kspace::SamplingMask;
use crate::kspace::{acquire, generate_mask, DEFAULT_SIGMA_FRAC};
use crate::model::{Cascade, CascadeConfig, Mode, Network, Wcnn, WcnnConfig};
use crate::real::Real;
use crate::tensor::Tensor;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element `i`.
pub fn finite_difference_grad<T: Real>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    h: T,
) -> Tensor<T> {
    let mut probe = x.clone();
    let two_h = h + h;
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / two_h;
    }
    out
}

/// Element-wise agreement between an analytic and a numeric gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct GradAgreement {
    pub count: usize,
    pub max_rel: f64,
    rel: Vec<f64>,
}

impl GradAgreement {
    /// Relative errors `|a - n| / max(|a|, |n|, floor)`.
    pub fn compare<T: Real>(analytic: &Tensor<T>, numeric: &Tensor<T>, floor: f64) -> Self {
        assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
        let rel: Vec<f64> = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(&a, &n)| {
                let (a, n) = (a.to_f64_lossy(), n.to_f64_lossy());
                (a - n).abs() / a.abs().max(n.abs()).max(floor)
            })
            .collect();
        let max_rel = rel.iter().copied().fold(0.0, f64::max);
        Self {
            count: rel.len(),
            max_rel,
            rel,
        }
    }

    /// Merges several comparisons into one population.
    pub fn merge(parts: impl IntoIterator<Item = GradAgreement>) -> Self {
        let rel: Vec<f64> = parts.into_iter().flat_map(|p| p.rel).collect();
        Self {
            count: rel.len(),
            max_rel: rel.iter().copied().fold(0.0, f64::max),
            rel,
        }
    }

    /// Fraction of elements whose relative error is at most `tol`.
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.rel.is_empty() {
            return 1.0;
        }
        self.rel.iter().filter(|&&r| r <= tol).count() as f64 / self.rel.len() as f64
    }
}

/// Checks `d mse_loss(net(x), target) / d theta` for every parameter element
/// of `net` against central differences with step `h`. Batch norm runs with
/// batch statistics, as in training.
pub fn network_gradients(
    net: &Network<f64>,
    x: &Tensor<f64>,
    ys: &[ComplexGrid<f64>],
    mask: &SamplingMask,
    target: &Tensor<f64>,
    h: f64,
    floor: f64,
) -> Result<GradAgreement> {
    let value = |net: &Network<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let (pred, _) = net.forward(&mut g, xi, ys, mask, Mode::Train)?;
        let l = g.mse_loss(pred, target)?;
        Ok(g.value(l).data()[0])
    };
    let mut analytic = net.clone();
    {
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let (pred, traces) = net.forward(&mut g, xi, ys, mask, Mode::Train)?;
        let l = g.mse_loss(pred, target)?;
        g.backward(l)?;
        for p in analytic.params_mut() {
            p.zero_grad();
        }
        analytic.absorb(&g, &traces)?;
    }
    let grads: Vec<Tensor<f64>> = analytic.params_mut().into_iter().map(|p| p.grad.clone()).collect();
    let mut parts = Vec::with_capacity(grads.len());
    let mut probe = net.clone();
    for (k, grad) in grads.iter().enumerate() {
        let mut numeric = Tensor::zeros(grad.shape());
        for i in 0..grad.len() {
            let orig = probe.params_mut()[k].value.data()[i];
            probe.params_mut()[k].value.data_mut()[i] = orig + h;
            let plus = value(&probe)?;
            probe.params_mut()[k].value.data_mut()[i] = orig - h;
            let minus = value(&probe)?;
            probe.params_mut()[k].value.data_mut()[i] = orig;
            numeric.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        parts.push(GradAgreement::compare(grad, &numeric, floor));
    }
    Ok(GradAgreement::merge(parts))
}

/// A cascade, batch and measurements to check gradients at.
pub struct GradProblem {
    pub net: Network<f64>,
    pub x: Tensor<f64>,
    pub ys: Vec<ComplexGrid<f64>>,
    pub mask: SamplingMask,
    pub target: Tensor<f64>,
}

impl GradProblem {
    /// Batch of two random `size`×`size` targets observed through a 4x mask,
    /// reconstructed by an `n_cascades`-stage cascade. Batch-norm scales are
    /// drawn from U(0.5, 1) and shifts from U(2, 3) so that the check lands at
    /// a generic point rather than one where most ReLU inputs sit at zero.
    pub fn cascade(config: WcnnConfig, n_cascades: usize, size: usize, seed: u64) -> Result<Self> {
        let mask = generate_mask(size, 4.0, 2, DEFAULT_SIGMA_FRAC, seed)?;
        let cfg = CascadeConfig {
            n_cascades,
            ..CascadeConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..cfg.block_count())
            .map(|b| {
                let mut m = Wcnn::<f64>::new(config.clone(), seed.wrapping_add(b as u64))?;
                for bn in m.norms_mut() {
                    for v in bn.gamma.value.data_mut() {
                        *v = rng.gen_range(0.5..1.0);
                    }
                    for v in bn.beta.value.data_mut() {
                        *v = rng.gen_range(2.0..3.0);
                    }
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Network::Cascade(Cascade::new(cfg, blocks)?);
        let (mut xs, mut ts, mut ys) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..2 {
            let t = Tensor::from_fn(&[size, size], |_| rng.gen_range(0.0..1.0));
            let (y, xu) = acquire(&t, &mask)?;
            xs.extend_from_slice(xu.data());
            ts.extend_from_slice(t.data());
            ys.push(y);
        }
        Ok(Self {
            net,
            x: Tensor::new(&[2, 1, size, size], xs)?,
            ys,
            mask,
            target: Tensor::new(&[2, 1, size, size], ts)?,
        })
    }

    pub fn check(&self, h: f64, floor: f64) -> Result<GradAgreement> {
        network_gradients(&self.net, &self.x, &self.ys, &self.mask, &self.target, h, floor)
    }
}
