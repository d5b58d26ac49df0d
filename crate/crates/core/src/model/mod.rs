//! The wavelet encoder-decoder network and its deep cascade.
//!
//! Layout for `levels = L`, `c_l = base_channels * 2^l`:
//!
//! ```text
//! x ─┬─ FC(c_0) ─tap0─ DWT ─ FC(c_1) ─tap1─ DWT ... FC(c_{L-1}) ─tap─ DWT ─ FC bottleneck
//!    │                                                                        │
//!    │   head ─ FC(c_0) ─ +tap0 ─ IWT ─ FC ─ ... ─ +tap_{L-1} ─ IWT ──────────┘
//!    └──────────────────────────── + ─── output
//! ```
//!
//! Each FC block is `block_depth` repetitions of conv3x3 -> BN -> ReLU. The
//! first conv after a DWT maps the stacked `4c` channels to `2c`; each
//! expansion block ends at four times the channel count of the tap it meets
//! after the next IWT. The head is a bare conv3x3 predicting the residual.

mod cascade;
mod checkpoint;
mod train;

pub use cascade::{dcwcnn_forward, Cascade, CascadeConfig};
pub use checkpoint::{init_cascade_from_standalone, Checkpoint, CheckpointMeta, NetworkKind};
pub use train::{
    evaluate, train, train_epoch, EpochLog, Network, TrainConfig, TrainControl,
};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, NormStats};
use crate::error::{shape_err, Error, Result};
use crate::optim::Param;
use crate::real::Real;
use crate::tensor::Tensor;

/// Whether batch norm uses batch statistics (and records them) or running ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WcnnConfig {
    pub levels: usize,
    pub block_depth: usize,
    pub base_channels: usize,
    pub input_channels: usize,
}

impl Default for WcnnConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            block_depth: 4,
            base_channels: 16,
            input_channels: 1,
        }
    }
}

impl WcnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.block_depth == 0 || self.base_channels == 0 || self.input_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "levels, block_depth, base_channels and input_channels must all be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial extents must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.levels
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let k = self.size_multiple();
        if !h.is_multiple_of(k) || !w.is_multiple_of(k) {
            return Err(shape_err(
                "wcnn_forward",
                format!("{h}x{w} is not divisible by 2^levels = {k}"),
            ));
        }
        Ok(())
    }
}

/// Records which graph nodes hold a network's parameters and batch-norm
/// statistics during one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    mode: Mode,
    params: Vec<NodeId>,
    norms: Vec<NodeId>,
}

impl Trace {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            params: Vec::new(),
            norms: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn bind<T: Real>(&mut self, g: &mut Graph<T>, p: &Param<T>) -> NodeId {
        let id = match self.mode {
            Mode::Train => g.leaf(p.value.clone()),
            Mode::Eval => g.constant(p.value.clone()),
        };
        self.params.push(id);
        id
    }
}

/// 3x3 convolution with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3x3<T = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Conv3x3<T> {
    fn new(prefix: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / libm::sqrt((cin * 9) as f64);
        let weight = Tensor::from_fn(&[cout, cin, 3, 3], |_| {
            T::from_f64_lossy(rng.gen_range(-bound..bound))
        });
        Self {
            weight: Param::new(format!("{prefix}.weight"), weight),
            bias: Param::new(format!("{prefix}.bias"), Tensor::zeros(&[cout])),
        }
    }

    fn forward(&self, g: &mut Graph<T>, x: NodeId, trace: &mut Trace) -> Result<NodeId> {
        let w = trace.bind(g, &self.weight);
        let b = trace.bind(g, &self.bias);
        g.conv2d(x, w, b)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

/// Batch normalization with running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d<T = f32> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Real> BatchNorm2d<T> {
    fn new(prefix: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{prefix}.gamma"), Tensor::ones(&[channels])),
            beta: Param::new(format!("{prefix}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    fn forward(&self, g: &mut Graph<T>, x: NodeId, trace: &mut Trace) -> Result<NodeId> {
        let gamma = trace.bind(g, &self.gamma);
        let beta = trace.bind(g, &self.beta);
        let stats = match trace.mode {
            Mode::Train => NormStats::Batch,
            Mode::Eval => NormStats::Running {
                mean: self.running_mean.data(),
                var: self.running_var.data(),
            },
        };
        let id = g.batch_norm(x, gamma, beta, stats, T::from_f64_lossy(self.eps))?;
        trace.norms.push(id);
        Ok(id)
    }

    /// `running = (1 - momentum) * running + momentum * batch`.
    fn absorb(&mut self, mean: &[T], var: &[T]) {
        let mom = T::from_f64_lossy(self.momentum);
        let keep = T::one() - mom;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *r = keep * *r + mom * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(var) {
            *r = keep * *r + mom * b;
        }
    }
}

/// conv3x3 -> BN -> ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBnRelu<T = f32> {
    pub conv: Conv3x3<T>,
    pub bn: BatchNorm2d<T>,
}

/// A fully convolutional block of `ConvBnRelu` layers.
#[derive(Clone, Debug, PartialEq)]
pub struct FcBlock<T = f32> {
    pub layers: Vec<ConvBnRelu<T>>,
    prefix: String,
}

impl<T: Real> FcBlock<T> {
    fn new(prefix: String, cin: usize, inner: usize, cout: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let a = if i == 0 { cin } else { inner };
                let b = if i + 1 == depth { cout } else { inner };
                let p = format!("{prefix}.{i}");
                ConvBnRelu {
                    conv: Conv3x3::new(&format!("{p}.conv"), a, b, rng),
                    bn: BatchNorm2d::new(&format!("{p}.bn"), b),
                }
            })
            .collect();
        Self { layers, prefix }
    }

    fn forward(&self, g: &mut Graph<T>, mut x: NodeId, trace: &mut Trace) -> Result<NodeId> {
        for layer in &self.layers {
            let c = layer.conv.forward(g, x, trace)?;
            let n = layer.bn.forward(g, c, trace)?;
            x = g.relu(n);
        }
        Ok(x)
    }
}

/// Wavelet encoder-decoder CNN with a global residual connection.
#[derive(Clone, Debug, PartialEq)]
pub struct Wcnn<T = f32> {
    config: WcnnConfig,
    /// One block per level, shallowest first.
    pub down: Vec<FcBlock<T>>,
    pub bottleneck: FcBlock<T>,
    /// Expansion blocks in execution order, deepest first.
    pub up: Vec<FcBlock<T>>,
    pub head: Conv3x3<T>,
}

impl<T: Real> Wcnn<T> {
    /// Builds the network with deterministic initialization from `seed`.
    pub fn new(config: WcnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = config.levels;
        let d = config.block_depth;
        let mut down = Vec::with_capacity(l);
        for level in 0..l {
            let cin = if level == 0 {
                config.input_channels
            } else {
                4 * config.width(level - 1)
            };
            let c = config.width(level);
            down.push(FcBlock::new(format!("down.{level}"), cin, c, c, d, &mut rng));
        }
        let deepest = config.width(l - 1);
        let bottleneck = FcBlock::new(
            "bottleneck".into(),
            4 * deepest,
            config.width(l),
            4 * deepest,
            d,
            &mut rng,
        );
        let mut up = Vec::with_capacity(l);
        for level in (0..l).rev() {
            let c = config.width(level);
            let cout = if level == 0 { c } else { 4 * config.width(level - 1) };
            up.push(FcBlock::new(format!("up.{level}"), c, c, cout, d, &mut rng));
        }
        let head = Conv3x3::new("head", config.width(0), config.input_channels, &mut rng);
        Ok(Self {
            config,
            down,
            bottleneck,
            up,
            head,
        })
    }

    pub fn config(&self) -> &WcnnConfig {
        &self.config
    }

    fn blocks(&self) -> impl Iterator<Item = &FcBlock<T>> {
        self.down
            .iter()
            .chain(core::iter::once(&self.bottleneck))
            .chain(self.up.iter())
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut FcBlock<T>> {
        self.down
            .iter_mut()
            .chain(core::iter::once(&mut self.bottleneck))
            .chain(self.up.iter_mut())
    }

    /// Trainable parameters in forward order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for block in self.blocks() {
            for l in &block.layers {
                out.extend([&l.conv.weight, &l.conv.bias, &l.bn.gamma, &l.bn.beta]);
            }
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for block in self.down.iter_mut().chain(core::iter::once(&mut self.bottleneck)).chain(self.up.iter_mut()) {
            for l in &mut block.layers {
                out.push(&mut l.conv.weight);
                out.push(&mut l.conv.bias);
                out.push(&mut l.bn.gamma);
                out.push(&mut l.bn.beta);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn norms(&self) -> impl Iterator<Item = &BatchNorm2d<T>> {
        self.blocks().flat_map(|b| b.layers.iter().map(|l| &l.bn))
    }

    pub fn norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm2d<T>> {
        self.blocks_mut().flat_map(|b| b.layers.iter_mut().map(|l| &mut l.bn))
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Names of the expansion and contraction blocks, for diagnostics.
    pub fn block_names(&self) -> Vec<&str> {
        self.blocks().map(|b| b.prefix.as_str()).collect()
    }

    /// Zeroes the head so the residual branch outputs exactly zero.
    pub fn zero_residual(&mut self) {
        self.head.weight.value.fill(T::zero());
        self.head.bias.value.fill(T::zero());
    }

    /// Records `x + residual(x)` on `g`. `x` is `[N, input_channels, H, W]`.
    pub fn forward(&self, g: &mut Graph<T>, x: NodeId, trace: &mut Trace) -> Result<NodeId> {
        let [_, c, h, w] = g.value(x).dims4("wcnn_forward")?;
        if c != self.config.input_channels {
            return Err(shape_err(
                "wcnn_forward",
                format!("expected {} input channels, got {c}", self.config.input_channels),
            ));
        }
        self.config.check_input(h, w)?;

        let mut taps = Vec::with_capacity(self.config.levels);
        let mut hcur = x;
        for block in &self.down {
            hcur = block.forward(g, hcur, trace)?;
            taps.push(hcur);
            hcur = g.dwt(hcur)?;
        }
        hcur = self.bottleneck.forward(g, hcur, trace)?;
        for block in &self.up {
            hcur = g.iwt(hcur)?;
            let tap = taps.pop().expect("one tap per level");
            hcur = g.add(hcur, tap)?;
            hcur = block.forward(g, hcur, trace)?;
        }
        let residual = self.head.forward(g, hcur, trace)?;
        g.add(x, residual)
    }

    /// Adds parameter gradients from `g` into each [`Param::grad`] and, for
    /// train-mode traces, folds batch statistics into the running ones.
    pub fn absorb(&mut self, g: &Graph<T>, trace: &Trace) -> Result<()> {
        let params = self.params_mut();
        if params.len() != trace.params.len() {
            return Err(Error::ConfigMismatch(format!(
                "trace holds {} parameters, network has {}",
                trace.params.len(),
                params.len()
            )));
        }
        for (p, &id) in params.into_iter().zip(&trace.params) {
            if let Some(grad) = g.grad(id) {
                p.accumulate(grad)?;
            }
        }
        if trace.mode == Mode::Train {
            for (bn, &id) in self.norms_mut().zip(&trace.norms) {
                if let Some((mean, var)) = g.batch_stats(id) {
                    bn.absorb(mean, var);
                }
            }
        }
        Ok(())
    }

    /// Eval-mode forward of a standalone network.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let mut trace = Trace::new(Mode::Eval);
        let out = self.forward(&mut g, xi, &mut trace)?;
        Ok(g.value(out).clone())
    }

    /// Converts every parameter and statistic to another float type.
    pub fn cast<U: Real>(&self) -> Wcnn<U> {
        fn param<T: Real, U: Real>(p: &Param<T>) -> Param<U> {
            Param {
                name: p.name.clone(),
                value: p.value.cast(),
                grad: p.grad.cast(),
                m: p.m.cast(),
                v: p.v.cast(),
                step: p.step,
            }
        }
        let conv = |c: &Conv3x3<T>| Conv3x3 {
            weight: param(&c.weight),
            bias: param(&c.bias),
        };
        let block = |b: &FcBlock<T>| FcBlock {
            prefix: b.prefix.clone(),
            layers: b
                .layers
                .iter()
                .map(|l| ConvBnRelu {
                    conv: conv(&l.conv),
                    bn: BatchNorm2d {
                        gamma: param(&l.bn.gamma),
                        beta: param(&l.bn.beta),
                        running_mean: l.bn.running_mean.cast(),
                        running_var: l.bn.running_var.cast(),
                        eps: l.bn.eps,
                        momentum: l.bn.momentum,
                    },
                })
                .collect(),
        };
        Wcnn {
            config: self.config.clone(),
            down: self.down.iter().map(block).collect(),
            bottleneck: block(&self.bottleneck),
            up: self.up.iter().map(block).collect(),
            head: conv(&self.head),
        }
    }
}
