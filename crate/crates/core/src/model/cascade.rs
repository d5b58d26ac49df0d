use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Mode, Trace, Wcnn};
use crate::autodiff::{Graph, NodeId};
use crate::error::{shape_err, Error, Result};
use crate::fft::ComplexGrid;
use crate::kspace::{conjugate_complete, zero_filled, FidelityConfig, SamplingMask};
use crate::real::Real;
use crate::tensor::Tensor;

/// Deep-cascade settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub n_cascades: usize,
    pub fidelity: FidelityConfig,
    /// Reuse one network in every stage instead of one per stage.
    pub share_weights: bool,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            n_cascades: 3,
            fidelity: FidelityConfig::default(),
            share_weights: false,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cascades == 0 {
            return Err(Error::InvalidArgument("n_cascades must be >= 1".into()));
        }
        self.fidelity.validate()
    }

    /// Number of distinct networks the cascade holds.
    pub fn block_count(&self) -> usize {
        if self.share_weights {
            1
        } else {
            self.n_cascades
        }
    }
}

/// `N_c` repetitions of (network, data fidelity).
#[derive(Clone, Debug, PartialEq)]
pub struct Cascade<T = f32> {
    config: CascadeConfig,
    pub blocks: Vec<Wcnn<T>>,
}

impl<T: Real> Cascade<T> {
    pub fn new(config: CascadeConfig, blocks: Vec<Wcnn<T>>) -> Result<Self> {
        config.validate()?;
        if blocks.len() != config.block_count() {
            return Err(Error::ConfigMismatch(format!(
                "cascade needs {} networks, got {}",
                config.block_count(),
                blocks.len()
            )));
        }
        if blocks.windows(2).any(|p| p[0].config() != p[1].config()) {
            return Err(Error::ConfigMismatch("cascade networks differ in architecture".into()));
        }
        Ok(Self { config, blocks })
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    /// Network used by stage `stage`.
    pub fn block_for(&self, stage: usize) -> &Wcnn<T> {
        &self.blocks[if self.config.share_weights { 0 } else { stage }]
    }

    pub fn block_index(&self, stage: usize) -> usize {
        if self.config.share_weights {
            0
        } else {
            stage
        }
    }

    /// Records the cascade on `g`, starting from the zero-filled batch `x0`.
    /// One trace per stage is appended to `traces`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        x0: NodeId,
        ys: &[ComplexGrid<T>],
        mask: &SamplingMask,
        mode: Mode,
        traces: &mut Vec<Trace>,
    ) -> Result<NodeId> {
        let mut x = x0;
        for stage in 0..self.config.n_cascades {
            let mut trace = Trace::new(mode);
            x = self.block_for(stage).forward(g, x, &mut trace)?;
            traces.push(trace);
            x = g.data_fidelity(x, ys, mask, &self.config.fidelity)?;
        }
        Ok(x)
    }

    /// Folds the per-stage traces of one forward pass back into the networks.
    pub fn absorb(&mut self, g: &Graph<T>, traces: &[Trace]) -> Result<()> {
        if traces.len() != self.config.n_cascades {
            return Err(Error::ConfigMismatch(format!(
                "{} traces for {} stages",
                traces.len(),
                self.config.n_cascades
            )));
        }
        for (stage, trace) in traces.iter().enumerate() {
            let i = self.block_index(stage);
            self.blocks[i].absorb(g, trace)?;
        }
        Ok(())
    }

    /// Eval-mode reconstruction from measurements.
    pub fn reconstruct(&self, y: &ComplexGrid<T>, mask: &SamplingMask) -> Result<Tensor<T>> {
        dcwcnn_forward_impl(self.config.n_cascades, |s| self.block_for(s), y, mask, &self.config.fidelity)
    }
}

/// Real-valued zero-filled image of measurements, `[h, w]`.
pub(crate) fn zero_filled_real<T: Real>(y: &ComplexGrid<T>, m: &SamplingMask) -> Result<Tensor<T>> {
    Ok(zero_filled(&conjugate_complete(y, m)?, m)?.real_part())
}

/// Runs `x0 = zero-filled(y)` followed by `network -> fidelity` once per
/// model, in eval mode. Returns an `[h, w]` image.
pub fn dcwcnn_forward<T: Real>(
    models: &[Wcnn<T>],
    y: &ComplexGrid<T>,
    m: &SamplingMask,
    cfg: &FidelityConfig,
) -> Result<Tensor<T>> {
    if models.is_empty() {
        return Err(Error::Empty("cascade models"));
    }
    dcwcnn_forward_impl(models.len(), |s| &models[s], y, m, cfg)
}

fn dcwcnn_forward_impl<'a, T: Real>(
    stages: usize,
    block: impl Fn(usize) -> &'a Wcnn<T>,
    y: &ComplexGrid<T>,
    m: &SamplingMask,
    cfg: &FidelityConfig,
) -> Result<Tensor<T>> {
    let (h, w) = (y.height(), y.width());
    if m.height() != h {
        return Err(shape_err("dcwcnn_forward", format!("mask has {} rows, image {h}", m.height())));
    }
    let x0 = zero_filled_real(y, m)?.reshape(&[1, 1, h, w])?;
    let mut g = Graph::new();
    let mut x = g.constant(x0);
    let ys = core::slice::from_ref(y);
    for stage in 0..stages {
        let mut trace = Trace::new(Mode::Eval);
        x = block(stage).forward(&mut g, x, &mut trace)?;
        x = g.data_fidelity(x, ys, m, cfg)?;
    }
    g.value(x).clone().reshape(&[h, w])
}
