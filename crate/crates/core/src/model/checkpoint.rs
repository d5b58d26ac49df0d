use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::cascade::{Cascade, CascadeConfig};
use super::train::{Network, TrainConfig};
use super::{Wcnn, WcnnConfig};
use crate::error::{Error, Result};
use crate::optim::Param;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Standalone,
    Cascade,
}

/// Everything in a checkpoint except the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: NetworkKind,
    pub wcnn: WcnnConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade: Option<CascadeConfig>,
    pub train: TrainConfig,
    /// Epochs completed when the snapshot was taken.
    pub epoch: usize,
    /// Seed the networks were initialized from.
    pub seed: u64,
    /// Adam step count shared by every parameter.
    pub adam_step: u64,
}

/// Named `f32` tensors plus metadata. Tensor names are the parameter names
/// (`down.0.1.conv.weight`, ...), their Adam moments (`<name>.adam_m`,
/// `<name>.adam_v`) and batch-norm running statistics
/// (`<layer>.bn.running_mean`, `<layer>.bn.running_var`). Cascade stages are
/// prefixed with `block<i>.`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn bn_prefix(gamma_name: &str) -> &str {
    gamma_name.strip_suffix("gamma").unwrap_or(gamma_name)
}

fn export(prefix: &str, m: &Wcnn<f32>, out: &mut Vec<(String, Tensor<f32>)>) {
    for p in m.params() {
        out.push((format!("{prefix}{}", p.name), p.value.clone()));
        out.push((format!("{prefix}{}.adam_m", p.name), p.m.clone()));
        out.push((format!("{prefix}{}.adam_v", p.name), p.v.clone()));
    }
    for bn in m.norms() {
        let base = bn_prefix(&bn.gamma.name);
        out.push((format!("{prefix}{base}running_mean"), bn.running_mean.clone()));
        out.push((format!("{prefix}{base}running_var"), bn.running_var.clone()));
    }
}

struct Lookup {
    map: BTreeMap<String, Tensor<f32>>,
}

impl Lookup {
    fn take(&mut self, name: &str, like: &Tensor<f32>) -> Result<Tensor<f32>> {
        let t = self
            .map
            .remove(name)
            .ok_or_else(|| Error::ConfigMismatch(format!("checkpoint is missing tensor {name}")))?;
        if t.shape() != like.shape() {
            return Err(Error::ConfigMismatch(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                like.shape()
            )));
        }
        Ok(t)
    }
}

fn import(prefix: &str, m: &mut Wcnn<f32>, lookup: &mut Lookup, step: u64) -> Result<()> {
    for p in m.params_mut() {
        let Param { name, value, m, v, .. } = &mut *p;
        *value = lookup.take(&format!("{prefix}{name}"), value)?;
        *m = lookup.take(&format!("{prefix}{name}.adam_m"), m)?;
        *v = lookup.take(&format!("{prefix}{name}.adam_v"), v)?;
        p.step = step;
        p.zero_grad();
    }
    for bn in m.norms_mut() {
        let base = String::from(bn_prefix(&bn.gamma.name));
        bn.running_mean = lookup.take(&format!("{prefix}{base}running_mean"), &bn.running_mean)?;
        bn.running_var = lookup.take(&format!("{prefix}{base}running_var"), &bn.running_var)?;
    }
    Ok(())
}

fn block_prefix(i: usize) -> String {
    format!("block{i}.")
}

impl Checkpoint {
    /// Snapshots `net`. `seed` and `train` are recorded for reproducibility.
    pub fn capture(net: &Network<f32>, train: &TrainConfig, epoch: usize, seed: u64) -> Self {
        let mut tensors = Vec::new();
        let (kind, cascade) = match net {
            Network::Standalone(m) => {
                export("", m, &mut tensors);
                (NetworkKind::Standalone, None)
            }
            Network::Cascade(c) => {
                for (i, m) in c.blocks.iter().enumerate() {
                    export(&block_prefix(i), m, &mut tensors);
                }
                (NetworkKind::Cascade, Some(c.config().clone()))
            }
        };
        let adam_step = net.networks()[0].params()[0].step;
        Self {
            meta: CheckpointMeta {
                kind,
                wcnn: net.wcnn_config().clone(),
                cascade,
                train: train.clone(),
                epoch,
                seed,
                adam_step,
            },
            tensors,
        }
    }

    /// Rebuilds the network. Every tensor must be consumed exactly once.
    pub fn restore(&self) -> Result<Network<f32>> {
        let mut lookup = Lookup {
            map: BTreeMap::new(),
        };
        for (name, t) in &self.tensors {
            if lookup.map.insert(name.clone(), t.clone()).is_some() {
                return Err(Error::ConfigMismatch(format!("duplicate tensor {name}")));
            }
        }
        let step = self.meta.adam_step;
        let net = match self.meta.kind {
            NetworkKind::Standalone => {
                let mut m = Wcnn::new(self.meta.wcnn.clone(), 0)?;
                import("", &mut m, &mut lookup, step)?;
                Network::Standalone(m)
            }
            NetworkKind::Cascade => {
                let cfg = self
                    .meta
                    .cascade
                    .clone()
                    .ok_or_else(|| Error::ConfigMismatch("cascade checkpoint without cascade config".into()))?;
                let mut blocks = Vec::with_capacity(cfg.block_count());
                for i in 0..cfg.block_count() {
                    let mut m = Wcnn::new(self.meta.wcnn.clone(), 0)?;
                    import(&block_prefix(i), &mut m, &mut lookup, step)?;
                    blocks.push(m);
                }
                Network::Cascade(Cascade::new(cfg, blocks)?)
            }
        };
        if let Some(name) = lookup.map.keys().next() {
            return Err(Error::ConfigMismatch(format!("unexpected tensor {name}")));
        }
        Ok(net)
    }
}

/// Builds a cascade whose every stage starts as an independent copy of the
/// standalone network in `standalone`, with fresh optimizer state.
pub fn init_cascade_from_standalone(
    standalone: &Checkpoint,
    config: CascadeConfig,
    expected: &WcnnConfig,
) -> Result<Cascade<f32>> {
    if standalone.meta.kind != NetworkKind::Standalone {
        return Err(Error::ConfigMismatch("initialization needs a standalone checkpoint".into()));
    }
    if &standalone.meta.wcnn != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint architecture {:?} differs from the cascade's {:?}",
            standalone.meta.wcnn, expected
        )));
    }
    let Network::Standalone(mut base) = standalone.restore()? else {
        unreachable!("kind checked above");
    };
    for p in base.params_mut() {
        *p = Param::new(core::mem::take(&mut p.name), p.value.clone());
    }
    let blocks = (0..config.block_count()).map(|_| base.clone()).collect();
    Cascade::new(config, blocks)
}
