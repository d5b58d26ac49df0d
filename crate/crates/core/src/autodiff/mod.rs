//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] owns every value produced during one forward pass. Nodes are
//! appended in evaluation order, so the tape order is already topological and
//! [`Graph::backward`] is a single reverse sweep.

mod conv;
mod norm;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::fft::ComplexGrid;
use crate::kspace::{conjugate_complete, fidelity_plane, FidelityConfig, SamplingMask};
use crate::parallel::map_indexed;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::wavelet::{dwt_stacked, iwt_stacked};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm statistics source.
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a, T> {
    /// Normalize with the batch's own statistics.
    Batch,
    /// Normalize with stored running statistics.
    Running { mean: &'a [T], var: &'a [T] },
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        batch_mean: Vec<T>,
        batch_var: Vec<T>,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sum(NodeId),
    Dwt(NodeId),
    Iwt(NodeId),
    Mse {
        pred: NodeId,
        target: Tensor<T>,
    },
    Fidelity {
        input: NodeId,
        known: Vec<bool>,
        kept: T,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::Relu(_) => "relu",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Sum(_) => "sum",
            Op::Dwt(_) => "dwt_layer",
            Op::Iwt(_) => "iwt_layer",
            Op::Mse { .. } => "mse_loss",
            Op::Fidelity { .. } => "data_fidelity",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
            } => vec![input, weight, bias],
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![input, gamma, beta],
            Op::Relu(a) | Op::Sum(a) | Op::Dwt(a) | Op::Iwt(a) => vec![a],
            Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Mse { pred, .. } => vec![pred],
            Op::Fidelity { input, .. } => vec![input],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    needs_grad: bool,
    op: Op<T>,
}

/// A computation tape.
#[derive(Debug)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable input (parameters, or inputs under a gradient check).
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad: true,
            op: Op::Leaf,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad: false,
            op: Op::Leaf,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient, or `None` if no backward pass reached the node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Gradient with zeros standing in for unreached nodes.
    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor<T> {
        self.grad(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(id).shape()))
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    /// Name of the operation that produced `id`.
    pub fn rule(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    pub fn count_rule(&self, rule: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.name() == rule).count()
    }

    /// Batch mean and unbiased batch variance recorded by a train-mode
    /// batch-norm node.
    pub fn batch_stats(&self, id: NodeId) -> Option<(&[T], &[T])> {
        match &self.nodes[id.0].op {
            Op::BatchNorm {
                batch_mean,
                batch_var,
                ..
            } if !batch_mean.is_empty() => Some((batch_mean, batch_var)),
            _ => None,
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// `conv2d(x[N,Cin,H,W], weight[Cout,Cin,3,3], bias[Cout])`, stride 1, zero padding 1.
    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let d = self.conv_dims(input, weight, bias)?;
        let out = conv::forward(self.value(input), self.value(weight), self.value(bias), d);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
            },
        ))
    }

    fn conv_dims(&self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<conv::ConvDims> {
        let [n, cin, h, w] = self.value(input).dims4("conv2d")?;
        let [cout, wcin, kh, kw] = self.value(weight).dims4("conv2d")?;
        if (kh, kw) != (3, 3) {
            return Err(shape_err("conv2d", format!("kernel must be 3x3, got {kh}x{kw}")));
        }
        if wcin != cin {
            return Err(shape_err(
                "conv2d",
                format!("input has {cin} channels, weight expects {wcin}"),
            ));
        }
        if self.value(bias).shape() != [cout] {
            return Err(shape_err(
                "conv2d",
                format!("bias {:?} vs {cout} output channels", self.value(bias).shape()),
            ));
        }
        Ok(conv::ConvDims { n, cin, cout, h, w })
    }

    /// Batch normalization over `(N, H, W)` per channel.
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: NormStats<'_, T>,
        eps: T,
    ) -> Result<NodeId> {
        let dims = self.value(input).dims4("batchnorm2d")?;
        let [n, c, h, w] = dims;
        for (p, what) in [(gamma, "gamma"), (beta, "beta")] {
            if self.value(p).shape() != [c] {
                return Err(shape_err(
                    "batchnorm2d",
                    format!("{what} {:?} vs {c} channels", self.value(p).shape()),
                ));
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let fwd = match stats {
            NormStats::Batch => {
                if n * h * w < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "batch statistics need at least 2 values per channel, got {}",
                        n * h * w
                    )));
                }
                norm::forward_train(self.value(input), dims, g, b, eps)
            }
            NormStats::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err(
                        "batchnorm2d",
                        format!("running stats of length {} for {c} channels", mean.len()),
                    ));
                }
                norm::forward_eval(self.value(input), dims, g, b, mean, var, eps)
            }
        };
        Ok(self.push(
            fwd.out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
                batch_mean: fwd.batch_mean,
                batch_var: fwd.batch_var,
            },
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = self
            .value(input)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(input))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).sum();
        self.push(Tensor::scalar(s), Op::Sum(input))
    }

    /// Stacked Haar analysis, `[N,C,H,W] -> [N,4C,H/2,W/2]`.
    pub fn dwt(&mut self, input: NodeId) -> Result<NodeId> {
        let out = dwt_stacked(self.value(input))?;
        Ok(self.push(out, Op::Dwt(input)))
    }

    /// Stacked Haar synthesis, `[N,4C,H,W] -> [N,C,2H,2W]`.
    pub fn iwt(&mut self, input: NodeId) -> Result<NodeId> {
        let out = iwt_stacked(self.value(input))?;
        Ok(self.push(out, Op::Iwt(input)))
    }

    /// Mean over the batch (leading axis) of per-sample squared L2 distances.
    pub fn mse_loss(&mut self, pred: NodeId, target: &Tensor<T>) -> Result<NodeId> {
        let p = self.value(pred);
        p.same_shape(target, "mse_loss")?;
        let batch = T::from_usize(p.shape()[0]).expect("batch fits");
        let sq: T = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(
            Tensor::scalar(sq / batch),
            Op::Mse {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// Data-fidelity correction of a `[N, 1, H, W]` batch against per-sample
    /// measurements `ys` sharing mask `mask`.
    pub fn data_fidelity(
        &mut self,
        input: NodeId,
        ys: &[ComplexGrid<T>],
        mask: &SamplingMask,
        cfg: &FidelityConfig,
    ) -> Result<NodeId> {
        cfg.validate()?;
        let [n, c, h, w] = self.value(input).dims4("data_fidelity")?;
        if c != 1 || ys.len() != n {
            return Err(shape_err(
                "data_fidelity",
                format!("expected [N,1,H,W] with N = {} measurements, got [{n},{c},{h},{w}]", ys.len()),
            ));
        }
        if mask.height() != h || ys.iter().any(|y| y.height() != h || y.width() != w) {
            return Err(shape_err("data_fidelity", "measurement or mask extents differ from the image"));
        }
        let known = mask.conjugate_closure();
        let (kept, measured) = cfg.blend::<T>();
        let completed = ys
            .iter()
            .map(|y| conjugate_complete(y, mask))
            .collect::<Result<Vec<_>>>()?;
        let x = self.value(input);
        let planes = map_indexed(n, |b| {
            fidelity_plane(
                &x.data()[b * h * w..(b + 1) * h * w],
                h,
                w,
                Some(&completed[b]),
                &known,
                kept,
                measured,
            )
        });
        let out = Tensor::new(&[n, 1, h, w], planes.concat())?;
        Ok(self.push(out, Op::Fidelity { input, known, kept }))
    }

    /// Reverse sweep from a scalar node. Gradients accumulate across calls.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let len = self.value(loss).len();
        if len != 1 {
            return Err(Error::NonScalarRoot { len });
        }
        let mut adj: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            for (parent, contrib) in self.local_grads(i, &g) {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut adj[parent.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g)?,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for each differentiable parent.
    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Vec<(NodeId, Tensor<T>)> {
        let needs = |id: NodeId| self.nodes[id.0].needs_grad;
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            &Op::Conv2d {
                input,
                weight,
                bias,
            } => {
                let d = self
                    .conv_dims(input, weight, bias)
                    .expect("validated at construction");
                let (dx, dw, db) =
                    conv::backward(self.value(input), self.value(weight), g, d, needs(input));
                let mut out = vec![(weight, dw), (bias, db)];
                if let Some(dx) = dx {
                    out.push((input, dx));
                }
                out
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_mean,
                ..
            } => {
                let dims = self.value(*input).dims4("batchnorm2d").expect("validated");
                let (dx, dg, db) = norm::backward(
                    g,
                    xhat,
                    inv_std,
                    self.value(*gamma).data(),
                    dims,
                    !batch_mean.is_empty(),
                );
                vec![(*input, dx), (*gamma, dg), (*beta, db)]
            }
            &Op::Relu(a) => {
                let x = self.value(a);
                let d = x
                    .zip_map(g, |v, gv| if v > T::zero() { gv } else { T::zero() })
                    .expect("same shape");
                vec![(a, d)]
            }
            &Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            &Op::Mul(a, b) => {
                let da = g.zip_map(self.value(b), |gv, v| gv * v).expect("same shape");
                let db = g.zip_map(self.value(a), |gv, v| gv * v).expect("same shape");
                vec![(a, da), (b, db)]
            }
            &Op::Sum(a) => vec![(a, Tensor::full(self.value(a).shape(), g.data()[0]))],
            &Op::Dwt(a) => vec![(a, iwt_stacked(g).expect("shape recorded"))],
            &Op::Iwt(a) => vec![(a, dwt_stacked(g).expect("shape recorded"))],
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let two = T::from_f64_lossy(2.0);
                let scale = two * g.data()[0] / T::from_usize(p.shape()[0]).expect("batch fits");
                let d = p.zip_map(target, |a, b| (a - b) * scale).expect("same shape");
                vec![(*pred, d)]
            }
            Op::Fidelity { input, known, kept } => {
                let [n, _, h, w] = g.dims4("data_fidelity").expect("validated");
                let planes = map_indexed(n, |b| {
                    fidelity_plane(
                        &g.data()[b * h * w..(b + 1) * h * w],
                        h,
                        w,
                        None,
                        known,
                        *kept,
                        T::zero(),
                    )
                });
                let d = Tensor::new(g.shape(), planes.concat()).expect("same shape");
                vec![(*input, d)]
            }
        }
    }
}
