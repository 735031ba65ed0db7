use std::cell::RefCell;

use super::{ops, Tensor};
use crate::error::{CoreError, Result};

pub type NodeId = usize;

/// Primitive op record. Variants carry whatever the backward rule needs
/// beyond the input values themselves (pool argmaxes, labels, axes).
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddScalar,
    MulScalar(f64),
    Matmul,
    BatchMatmul,
    Conv2d {
        stride: usize,
        pad: usize,
    },
    BiasChan,
    BiasRow,
    MaxPool2 {
        argmax: Vec<usize>,
    },
    Relu,
    Tanh,
    Softmax,
    CrossEntropyMean {
        labels: Vec<usize>,
    },
    LayerNorm {
        eps: f64,
    },
    Clamp {
        lo: f64,
        hi: f64,
    },
    Sign,
    Round,
    SmoothRound,
    Sum,
    Mean,
    MeanTokens,
    Reshape,
    Permute {
        axes: Vec<usize>,
    },
    BlockDct,
    BlockIdct,
    PadReplicate,
    Crop,
    RgbToYcbcr,
    YcbcrToRgb,
    Upsample2x,
    SelectLabels {
        labels: Vec<usize>,
    },
    RowMax {
        argmax: Vec<usize>,
    },
    /// Negative log2 likelihood of continuous values under per-channel
    /// piecewise-linear densities over integer bins starting at `vmin`.
    BinRate {
        vmin: f64,
    },
}

pub(crate) fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add => "add",
        Op::Sub => "sub",
        Op::Mul => "mul",
        Op::Div => "div",
        Op::AddScalar => "add_scalar",
        Op::MulScalar(_) => "mul_scalar",
        Op::Matmul => "matmul",
        Op::BatchMatmul => "batch_matmul",
        Op::Conv2d { .. } => "conv2d",
        Op::BiasChan => "bias_chan",
        Op::BiasRow => "bias_row",
        Op::MaxPool2 { .. } => "max_pool2",
        Op::Relu => "relu",
        Op::Tanh => "tanh",
        Op::Softmax => "softmax",
        Op::CrossEntropyMean { .. } => "cross_entropy_mean",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Clamp { .. } => "clamp",
        Op::Sign => "sign",
        Op::Round => "round",
        Op::SmoothRound => "smooth_round",
        Op::Sum => "sum",
        Op::Mean => "mean",
        Op::MeanTokens => "mean_tokens",
        Op::Reshape => "reshape",
        Op::Permute { .. } => "permute",
        Op::BlockDct => "block_dct",
        Op::BlockIdct => "block_idct",
        Op::PadReplicate => "pad_replicate",
        Op::Crop => "crop",
        Op::RgbToYcbcr => "rgb_to_ycbcr",
        Op::YcbcrToRgb => "ycbcr_to_rgb",
        Op::Upsample2x => "upsample2x",
        Op::SelectLabels { .. } => "select_labels",
        Op::RowMax { .. } => "row_max",
        Op::BinRate { .. } => "bin_rate",
    }
}

pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub value: Tensor,
    pub requires_grad: bool,
}

/// Wengert tape. Nodes are appended in evaluation order, so the vec
/// itself is a valid topological order for the backward sweep.
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a tape. Cheap to copy; values live in the tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub id: NodeId,
}

/// Gradients for tape leaves, keyed by node id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn get_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Insert a leaf. Gradients are reported only for leaves with
    /// `requires_grad`.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: Op::Leaf,
            inputs: vec![],
            value,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(CoreError::NonFinite { op: op_name(&op) });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn with_value<R>(&self, id: NodeId, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a scalar loss. Returns d(loss)/d(leaf) for
    /// every reachable leaf with `requires_grad`. Deterministic: plain
    /// sequential accumulation in reverse insertion order.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(CoreError::BadShape {
                op: "backward",
                expected: "scalar loss".into(),
                got: nodes[loss.id].value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            if grads[id].is_none() || !nodes[id].requires_grad {
                continue;
            }
            let out_grad = grads[id].take().unwrap();
            super::grad::accumulate(&nodes, id, &out_grad, &mut grads)?;
            if matches!(nodes[id].op, Op::Leaf) {
                grads[id] = Some(out_grad); // leaves keep their gradient
            }
        }
        // drop gradients of non-leaf intermediates and detached leaves
        for (id, slot) in grads.iter_mut().enumerate() {
            if !matches!(nodes[id].op, Op::Leaf) || !nodes[id].requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.with_value(self.id, |t| t.clone())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |t| t.shape().to_vec())
    }

    pub fn item(&self) -> f64 {
        self.tape.with_value(self.id, |t| t.item())
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, f)?;
        self.tape.push(op, vec![self.id], value)
    }

    fn binary(
        &self,
        other: Var<'t>,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        self.tape.push(op, vec![self.id, other.id], value)
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add, |a, b| ops::elementwise(a, b, "add", |x, y| x + y))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub, |a, b| ops::elementwise(a, b, "sub", |x, y| x - y))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul, |a, b| ops::elementwise(a, b, "mul", |x, y| x * y))
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Div, |a, b| ops::elementwise(a, b, "div", |x, y| x / y))
    }

    pub fn add_scalar(&self, s: f64) -> Result<Var<'t>> {
        self.unary(Op::AddScalar, |a| ops::map(a, |x| x + s))
    }

    pub fn mul_scalar(&self, s: f64) -> Result<Var<'t>> {
        self.unary(Op::MulScalar(s), |a| ops::map(a, |x| x * s))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Matmul, ops::matmul)
    }

    pub fn batch_matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::BatchMatmul, ops::batch_matmul)
    }

    pub fn conv2d(&self, weight: Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        self.binary(weight, Op::Conv2d { stride, pad }, |x, w| {
            ops::conv2d(x, w, stride, pad)
        })
    }

    pub fn bias_chan(&self, bias: Var<'t>) -> Result<Var<'t>> {
        self.binary(bias, Op::BiasChan, ops::bias_chan)
    }

    pub fn bias_row(&self, bias: Var<'t>) -> Result<Var<'t>> {
        self.binary(bias, Op::BiasRow, ops::bias_row)
    }

    pub fn max_pool2(&self) -> Result<Var<'t>> {
        let (value, argmax) = self.tape.with_value(self.id, ops::max_pool2)?;
        self.tape.push(Op::MaxPool2 { argmax }, vec![self.id], value)
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary(Op::Relu, |a| ops::map(a, |x| x.max(0.0)))
    }

    pub fn tanh_act(&self) -> Result<Var<'t>> {
        self.unary(Op::Tanh, |a| ops::map(a, f64::tanh))
    }

    pub fn softmax(&self) -> Result<Var<'t>> {
        self.unary(Op::Softmax, ops::softmax)
    }

    /// Fused, numerically stabilized softmax + cross-entropy, mean over
    /// the batch. Logits (B,K), labels in [0,K).
    pub fn cross_entropy_mean(&self, labels: &[usize]) -> Result<Var<'t>> {
        let value = self
            .tape
            .with_value(self.id, |a| ops::cross_entropy_mean(a, labels))?;
        self.tape.push(
            Op::CrossEntropyMean {
                labels: labels.to_vec(),
            },
            vec![self.id],
            value,
        )
    }

    pub fn layer_norm(&self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            ops::layer_norm(
                &nodes[self.id].value,
                &nodes[gain.id].value,
                &nodes[bias.id].value,
                eps,
            )?
        };
        self.tape
            .push(Op::LayerNorm { eps }, vec![self.id, gain.id, bias.id], value)
    }

    /// Subgradient 0 outside [lo,hi], 1 inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.unary(Op::Clamp { lo, hi }, |a| ops::map(a, |x| x.clamp(lo, hi)))
    }

    /// Gradient 0 everywhere.
    pub fn sign(&self) -> Result<Var<'t>> {
        self.unary(Op::Sign, |a| {
            ops::map(a, |x| if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            })
        })
    }

    /// Hard round; gradient 0 everywhere (non-differentiable mode).
    pub fn round(&self) -> Result<Var<'t>> {
        self.unary(Op::Round, |a| ops::map(a, f64::round))
    }

    /// r(x) = round(x) + (x - round(x))^3, derivative 3 (x - round(x))^2.
    /// Exact at integers.
    pub fn smooth_round(&self) -> Result<Var<'t>> {
        self.unary(Op::SmoothRound, |a| {
            ops::map(a, |x| {
                let r = x.round();
                let d = x - r;
                r + d * d * d
            })
        })
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        self.unary(Op::Sum, |a| Ok(Tensor::scalar(a.data().iter().sum())))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        self.unary(Op::Mean, |a| {
            let n = a.numel().max(1) as f64;
            Ok(Tensor::scalar(a.data().iter().sum::<f64>() / n))
        })
    }

    /// (B,T,D) -> (B,D), mean over tokens.
    pub fn mean_tokens(&self) -> Result<Var<'t>> {
        self.unary(Op::MeanTokens, ops::mean_tokens)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        self.unary(Op::Reshape, |a| a.clone().reshaped(shape.to_vec()))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t>> {
        let value = self
            .tape
            .with_value(self.id, |a| ops::permute(a, axes))?;
        self.tape.push(
            Op::Permute {
                axes: axes.to_vec(),
            },
            vec![self.id],
            value,
        )
    }

    /// Orthonormal type-II 8x8 block DCT over (B,C,H,W); H,W multiples of 8.
    pub fn block_dct(&self) -> Result<Var<'t>> {
        self.unary(Op::BlockDct, |a| ops::block_dct(a, false))
    }

    pub fn block_idct(&self) -> Result<Var<'t>> {
        self.unary(Op::BlockIdct, |a| ops::block_dct(a, true))
    }

    /// Edge-replication pad up to (target_h, target_w).
    pub fn pad_replicate(&self, target_h: usize, target_w: usize) -> Result<Var<'t>> {
        self.unary(Op::PadReplicate, |a| ops::pad_replicate(a, target_h, target_w))
    }

    /// Keep the top-left (h, w) window.
    pub fn crop(&self, h: usize, w: usize) -> Result<Var<'t>> {
        self.unary(Op::Crop, |a| ops::crop(a, h, w))
    }

    pub fn rgb_to_ycbcr(&self) -> Result<Var<'t>> {
        self.unary(Op::RgbToYcbcr, |a| ops::color_transform(a, false))
    }

    pub fn ycbcr_to_rgb(&self) -> Result<Var<'t>> {
        self.unary(Op::YcbcrToRgb, |a| ops::color_transform(a, true))
    }

    /// Nearest-neighbor 2x upsampling over (B,C,H,W).
    pub fn upsample2x(&self) -> Result<Var<'t>> {
        self.unary(Op::Upsample2x, ops::upsample2x)
    }

    /// (B,K) logits -> (B,) entries at the label index per row.
    pub fn select_labels(&self, labels: &[usize]) -> Result<Var<'t>> {
        let value = self
            .tape
            .with_value(self.id, |a| ops::select_labels(a, labels))?;
        self.tape.push(
            Op::SelectLabels {
                labels: labels.to_vec(),
            },
            vec![self.id],
            value,
        )
    }

    /// (B,K) -> (B,) row maxima; gradient routed to the argmax.
    pub fn row_max(&self) -> Result<Var<'t>> {
        let (value, argmax) = self.tape.with_value(self.id, ops::row_max)?;
        self.tape.push(Op::RowMax { argmax }, vec![self.id], value)
    }

    /// Total -log2 likelihood (bits) of `self` values (B,C,H,W) under
    /// per-channel bin probabilities `probs` (C,bins); bins cover
    /// integers vmin..=vmin+bins-1 with linear interpolation between.
    pub fn bin_rate(&self, probs: Var<'t>, vmin: f64) -> Result<Var<'t>> {
        self.binary(probs, Op::BinRate { vmin }, |v, p| ops::bin_rate(v, p, vmin))
    }
}
