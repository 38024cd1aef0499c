use super::{Scalar, Shape, Tensor};
use crate::error::{FameError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    InstanceNorm {
        x: Var,
        rstd: Vec<T>,
    },
    Relu(Var),
    Softplus(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, T),
    MaskChannels {
        x: Var,
        mask: Var,
    },
    L1Distance(Var, Var),
    SumAll(Var),
    MeanAll(Var),
    GlobalAvgPool(Var),
    GlobalMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat(Vec<Var>),
    Narrow {
        x: Var,
        start: usize,
    },
    FullyConnected {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Softmax(Var),
    Upsample {
        x: Var,
        factor: usize,
    },
    StraightThrough(Var),
    TopKSoftmax(Var),
    BatchSelect {
        x: Var,
        rows: Vec<usize>,
    },
    BatchScatter {
        x: Var,
        rows: Vec<usize>,
    },
    ScaleRows {
        x: Var,
        gates: Var,
        expert: usize,
        rows: Vec<usize>,
    },
    SumBatch(Var),
    Scv(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::ScalarMul(..) => "scalar_mul",
            Op::MaskChannels { .. } => "mask_channels",
            Op::L1Distance(..) => "l1_distance",
            Op::SumAll(_) => "sum",
            Op::MeanAll(_) => "mean",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::GlobalMaxPool { .. } => "global_max_pool",
            Op::Concat(_) => "concat_channels",
            Op::Narrow { .. } => "narrow_channels",
            Op::FullyConnected { .. } => "fully_connected",
            Op::Softmax(_) => "softmax",
            Op::Upsample { .. } => "bilinear_upsample",
            Op::StraightThrough(_) => "straight_through",
            Op::TopKSoftmax(_) => "topk_softmax",
            Op::BatchSelect { .. } => "batch_select",
            Op::BatchScatter { .. } => "batch_scatter",
            Op::ScaleRows { .. } => "scale_rows",
            Op::SumBatch(_) => "sum_batch",
            Op::Scv(_) => "scv",
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Linear record of a forward pass. Nodes are appended in execution order,
/// so every operation's inputs precede it.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// Finite-value checking follows `debug_assertions`.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(FameError::numeric(op.name(), "non-finite value in output"));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse-topological accumulation from a scalar `loss`. Gradients are
    /// retained for leaves only.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if shape.numel() != 1 {
            return Err(FameError::Contract(format!(
                "backward needs a scalar loss, got shape {shape}"
            )));
        }
        let mut buf = GradBuf {
            slots: (0..=loss.0).map(|_| None).collect(),
            nodes: &self.nodes,
        };
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { slots: buf.slots });
        }
        buf.slots[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = buf.slots[i].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut buf);
        }
        Ok(Gradients { slots: buf.slots })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], buf: &mut GradBuf<'_, T>) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => super::conv::conv2d_backward(self, *x, *w, *b, *stride, *pad, g, buf),
            Op::InstanceNorm { x, rstd } => {
                super::norm::instance_norm_backward(y, rstd, *x, g, buf)
            }
            Op::Relu(x) => super::pointwise::relu_backward(self.value(*x), *x, g, buf),
            Op::Softplus(x) => super::pointwise::softplus_backward(self.value(*x), *x, g, buf),
            Op::Add(a, b) => super::pointwise::add_backward(*a, *b, T::one(), g, buf),
            Op::Sub(a, b) => super::pointwise::add_backward(*a, *b, -T::one(), g, buf),
            Op::Mul(a, b) => super::pointwise::mul_backward(self, *a, *b, g, buf),
            Op::ScalarMul(x, s) => {
                if let Some(gx) = buf.slot(*x) {
                    for (d, &gi) in gx.iter_mut().zip(g) {
                        *d += gi * *s;
                    }
                }
            }
            Op::MaskChannels { x, mask } => {
                super::pointwise::mask_channels_backward(self, *x, *mask, g, buf)
            }
            Op::L1Distance(a, b) => super::reduce::l1_backward(self, *a, *b, g[0], buf),
            Op::SumAll(x) => {
                if let Some(gx) = buf.slot(*x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::MeanAll(x) => {
                if let Some(gx) = buf.slot(*x) {
                    let s = g[0] / T::cst(gx.len() as f64);
                    gx.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::GlobalAvgPool(x) => super::reduce::avg_pool_backward(self.shape(*x), *x, g, buf),
            Op::GlobalMaxPool { x, argmax } => {
                if let Some(gx) = buf.slot(*x) {
                    for (&idx, &gi) in argmax.iter().zip(g) {
                        gx[idx] += gi;
                    }
                }
            }
            Op::Concat(parts) => super::layout::concat_backward(self, parts, y.shape(), g, buf),
            Op::Narrow { x, start } => {
                super::layout::narrow_backward(self.shape(*x), *x, *start, y.shape(), g, buf)
            }
            Op::FullyConnected { x, w, b } => super::routing::fc_backward(self, *x, *w, *b, g, buf),
            Op::Softmax(x) | Op::TopKSoftmax(x) => super::routing::softmax_backward(y, *x, g, buf),
            Op::Upsample { x, factor } => {
                super::layout::upsample_backward(self.shape(*x), *x, *factor, g, buf)
            }
            Op::StraightThrough(x) => {
                if let Some(gx) = buf.slot(*x) {
                    for (d, &gi) in gx.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            Op::BatchSelect { x, rows } => {
                super::layout::batch_select_backward(self.shape(*x), *x, rows, g, buf)
            }
            Op::BatchScatter { x, rows } => {
                super::layout::batch_scatter_backward(self.shape(*x), *x, rows, g, buf)
            }
            Op::ScaleRows {
                x,
                gates,
                expert,
                rows,
            } => super::routing::scale_rows_backward(self, *x, *gates, *expert, rows, g, buf),
            Op::SumBatch(x) => {
                if let Some(gx) = buf.slot(*x) {
                    let per = g.len();
                    for chunk in gx.chunks_mut(per) {
                        for (d, &gi) in chunk.iter_mut().zip(g) {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Scv(x) => super::reduce::scv_backward(self.value(*x), *x, g[0], buf),
        }
    }
}

pub(crate) struct GradBuf<'a, T> {
    slots: Vec<Option<Vec<T>>>,
    nodes: &'a [Node<T>],
}

impl<T: Scalar> GradBuf<'_, T> {
    /// Zero-initialized accumulator for `v`, or `None` when `v` takes no
    /// gradient.
    pub(crate) fn slot(&mut self, v: Var) -> Option<&mut [T]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(self.slots[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when no path from the loss reached `v`.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.slots.get(v.0).and_then(|s| s.as_deref())
    }

    pub fn reached(&self, v: Var) -> bool {
        self.get(v).is_some()
    }

    /// Gradient of `v` as a tensor shaped like `v`; zeros when unreached.
    pub fn tensor(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        let shape = tape.shape(v);
        match self.get(v) {
            Some(g) => Tensor::from_vec(shape, g.to_vec()).expect("gradient matches value shape"),
            None => Tensor::zeros(shape),
        }
    }
}
