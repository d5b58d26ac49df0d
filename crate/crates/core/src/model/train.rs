use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cascade::Cascade;
use super::{Mode, Trace, Wcnn, WcnnConfig};
use crate::autodiff::{Graph, NodeId};
use crate::data::{PairedDataset, Sample};
use crate::error::{Error, Result};
use crate::fft::ComplexGrid;
use crate::kspace::SamplingMask;
use crate::metrics::{evaluate_image, summarize, ImageMetrics, MetricSummary};
use crate::optim::{Adam, Param};
use crate::parallel::map_indexed;
use crate::real::Real;
use crate::tensor::Tensor;

/// A standalone network or a deep cascade.
#[derive(Clone, Debug, PartialEq)]
pub enum Network<T = f32> {
    Standalone(Wcnn<T>),
    Cascade(Cascade<T>),
}

impl<T: Real> Network<T> {
    pub fn wcnn_config(&self) -> &WcnnConfig {
        match self {
            Network::Standalone(m) => m.config(),
            Network::Cascade(c) => c.blocks[0].config(),
        }
    }

    pub fn networks(&self) -> &[Wcnn<T>] {
        match self {
            Network::Standalone(m) => core::slice::from_ref(m),
            Network::Cascade(c) => &c.blocks,
        }
    }

    pub fn networks_mut(&mut self) -> &mut [Wcnn<T>] {
        match self {
            Network::Standalone(m) => core::slice::from_mut(m),
            Network::Cascade(c) => &mut c.blocks,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.networks_mut().iter_mut().flat_map(|m| m.params_mut()).collect()
    }

    /// Records the network on `g` for a `[N, 1, H, W]` batch `x` of
    /// zero-filled inputs with measurements `ys` (unused standalone).
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        ys: &[ComplexGrid<T>],
        mask: &SamplingMask,
        mode: Mode,
    ) -> Result<(NodeId, Vec<Trace>)> {
        match self {
            Network::Standalone(m) => {
                let mut trace = Trace::new(mode);
                let out = m.forward(g, x, &mut trace)?;
                Ok((out, alloc::vec![trace]))
            }
            Network::Cascade(c) => {
                let mut traces = Vec::new();
                let out = c.forward(g, x, ys, mask, mode, &mut traces)?;
                Ok((out, traces))
            }
        }
    }

    pub fn absorb(&mut self, g: &Graph<T>, traces: &[Trace]) -> Result<()> {
        match self {
            Network::Standalone(m) => m.absorb(g, &traces[0]),
            Network::Cascade(c) => c.absorb(g, traces),
        }
    }
}

impl Network<f32> {
    /// Eval-mode reconstruction of one sample, `[h, w]`.
    pub fn reconstruct(&self, sample: &Sample, mask: &SamplingMask) -> Result<Tensor<f32>> {
        let shape = sample.x_u.shape().to_vec();
        let (_, h, w) = sample.x_u.plane_dims("reconstruct")?;
        match self {
            Network::Standalone(m) => m
                .predict(&sample.x_u.clone().reshape(&[1, 1, h, w])?)?
                .reshape(&shape),
            Network::Cascade(c) => c.reconstruct(&sample.y, mask)?.reshape(&shape),
        }
    }
}

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub adam: Adam,
    /// Epochs already completed; shuffling continues from here.
    #[serde(default)]
    pub start_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 4,
            seed: 0,
            adam: Adam::default(),
            start_epoch: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be >= 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.adam.lr)));
        }
        Ok(())
    }
}

/// Per-epoch record. Epoch 0 is the evaluation before any update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val: Option<MetricSummary>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainControl {
    Continue,
    Stop,
}

fn batch_input(items: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (_, h, w) = items[0].x_u.plane_dims("train")?;
    let mut xu = Vec::with_capacity(items.len() * h * w);
    let mut xt = Vec::with_capacity(items.len() * h * w);
    for s in items {
        xu.extend_from_slice(s.x_u.data());
        xt.extend_from_slice(s.x_t.data());
    }
    let shape = [items.len(), 1, h, w];
    Ok((Tensor::new(&shape, xu)?, Tensor::new(&shape, xt)?))
}

/// One pass over `data` in a seeded shuffled order; returns the mean
/// per-sample loss.
pub fn train_epoch(
    net: &mut Network<f32>,
    data: &PairedDataset,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    data.dims()?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);

    let mut total = 0.0f64;
    for chunk in order.chunks(cfg.batch_size) {
        let items: Vec<&Sample> = chunk.iter().map(|&i| &data.items[i]).collect();
        let (xu, xt) = batch_input(&items)?;
        let ys: Vec<ComplexGrid<f32>> = match net {
            Network::Standalone(_) => Vec::new(),
            Network::Cascade(_) => items.iter().map(|s| s.y.clone()).collect(),
        };
        let mut g = Graph::new();
        let x = g.constant(xu);
        let (pred, traces) = net.forward(&mut g, x, &ys, &data.mask, Mode::Train)?;
        let loss = g.mse_loss(pred, &xt)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("training diverged: loss {value}")));
        }
        total += f64::from(value) * items.len() as f64;
        g.backward(loss)?;
        net.absorb(&g, &traces)?;
        cfg.adam.step(net.params_mut());
    }
    Ok(total / data.len() as f64)
}

/// Eval-mode metrics of every item, in dataset order.
pub fn evaluate(net: &Network<f32>, data: &PairedDataset) -> Result<Vec<ImageMetrics>> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    map_indexed(data.len(), |i| {
        let s = &data.items[i];
        evaluate_image(&net.reconstruct(s, &data.mask)?, &s.x_t)
    })
    .into_iter()
    .collect()
}

/// Runs `cfg.epochs` epochs after an initial evaluation, calling `on_epoch`
/// after each (including epoch 0).
pub fn train<E: From<Error>>(
    net: &mut Network<f32>,
    train_set: &PairedDataset,
    val_set: Option<&PairedDataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &Network<f32>) -> core::result::Result<TrainControl, E>,
) -> core::result::Result<Vec<EpochLog>, E> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set").into());
    }
    let val_summary = |net: &Network<f32>| -> Result<Option<MetricSummary>> {
        match val_set {
            Some(v) => Ok(Some(summarize(&evaluate(net, v)?)?)),
            None => Ok(None),
        }
    };
    let mut logs = Vec::with_capacity(cfg.epochs + 1);
    let first = EpochLog {
        epoch: cfg.start_epoch,
        train_loss: None,
        val: val_summary(net)?,
    };
    let control = on_epoch(&first, net)?;
    logs.push(first);
    if control == TrainControl::Stop {
        return Ok(logs);
    }
    for epoch in cfg.start_epoch + 1..=cfg.start_epoch + cfg.epochs {
        let loss = train_epoch(net, train_set, cfg, epoch)?;
        let log = EpochLog {
            epoch,
            train_loss: Some(loss),
            val: val_summary(net)?,
        };
        let control = on_epoch(&log, net)?;
        logs.push(log);
        if control == TrainControl::Stop {
            break;
        }
    }
    Ok(logs)
}
