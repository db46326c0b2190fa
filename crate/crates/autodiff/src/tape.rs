use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use crate::ops::{self, ConvGeom};
use crate::{AdError, Tensor};

/// Handle of a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Maximum(NodeId, NodeId),
    Minimum(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Square(NodeId),
    Exp(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    LogSigmoid(NodeId),
    Atan(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        geom: ConvGeom,
    },
    Reshape(NodeId),
    Broadcast(NodeId),
    Slice {
        src: NodeId,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Maximum(..) => "maximum",
            Op::Minimum(..) => "minimum",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Square(_) => "square",
            Op::Exp(_) => "exp",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::Atan(_) => "atan",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Matmul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Conv2d { .. } => "conv2d",
            Op::Reshape(_) => "reshape",
            Op::Broadcast(_) => "broadcast",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Maximum(a, b)
            | Op::Minimum(a, b)
            | Op::Matmul(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Square(a)
            | Op::Exp(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::Atan(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Broadcast(a) => vec![*a],
            Op::Slice { src, .. } => vec![*src],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
    param: bool,
}

/// One recorded operation, as exposed for inspection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub kind: &'static str,
    pub inputs: Vec<NodeId>,
    pub output: NodeId,
    pub tracked: bool,
}

/// Append-only operation log for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Lightweight handle to a value on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a scalar root with respect to every grad-flagged leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(&var.id)
    }

    pub fn by_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.remove(&var.id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.grads.keys().copied()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Grad-flagged leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub fn entries(&self) -> Vec<Entry> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .map(|(i, n)| Entry {
                kind: n.op.kind(),
                inputs: n.op.inputs(),
                output: NodeId(i),
                tracked: n.tracked,
            })
            .collect()
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool, param: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node {
            value,
            op,
            tracked,
            param,
        });
        Var { tape: self, id }
    }

    fn record(&self, value: Tensor, op: Op) -> Var<'_> {
        let tracked = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|i| nodes[i.0].tracked)
        };
        // untracked results need no saved context
        let op = if tracked { op } else { Op::Leaf };
        self.push(value, op, tracked, false)
    }

    /// Reverse sweep from a scalar `root`.
    ///
    /// Every grad-flagged leaf receives exactly one gradient; leaves the root
    /// does not depend on receive zeros.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients, AdError> {
        let nodes = self.nodes.borrow();
        let rnode = &nodes[root.id.0];
        if !rnode.value.is_scalar() {
            return Err(AdError::NonScalarRoot(rnode.value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.id.0 + 1];
        adj[root.id.0] = Some(Tensor::from_parts(rnode.value.shape().to_vec(), vec![1.0]));
        let mut out = Gradients::default();

        for i in (0..=root.id.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.tracked {
                continue;
            }
            if node.param {
                out.grads.insert(NodeId(i), g);
                continue;
            }
            propagate(&nodes, node, &g, &mut adj);
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.param {
                out.grads
                    .entry(NodeId(i))
                    .or_insert_with(|| Tensor::zeros_like(&n.value));
            }
        }
        Ok(out)
    }
}

impl Tensor {
    fn zeros_like(t: &Tensor) -> Tensor {
        Tensor::from_parts(t.shape().to_vec(), vec![0.0; t.len()])
    }
}

fn accumulate(adj: &mut [Option<Tensor>], nodes: &[Node], id: NodeId, g: Tensor) {
    if !nodes[id.0].tracked {
        return;
    }
    match &mut adj[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
    let val = |id: NodeId| &nodes[id.0].value;
    let tracked = |id: NodeId| nodes[id.0].tracked;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(adj, nodes, *a, g.clone());
            accumulate(adj, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(adj, nodes, *a, g.clone());
            accumulate(adj, nodes, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            if tracked(*a) {
                accumulate(adj, nodes, *a, zip_map(g, val(*b), |g, y| g * y));
            }
            if tracked(*b) {
                accumulate(adj, nodes, *b, zip_map(g, val(*a), |g, x| g * x));
            }
        }
        Op::Div(a, b) => {
            let bv = val(*b);
            if tracked(*a) {
                accumulate(adj, nodes, *a, zip_map(g, bv, |g, y| g / y));
            }
            if tracked(*b) {
                // d(x/y)/dy = -(x/y)/y
                let q = zip_map(&node.value, bv, |q, y| -q / y);
                accumulate(adj, nodes, *b, zip_map(g, &q, |g, d| g * d));
            }
        }
        Op::Maximum(a, b) | Op::Minimum(a, b) => {
            let pick_a = matches!(node.op, Op::Maximum(..));
            let (av, bv) = (val(*a), val(*b));
            // ties route the gradient to the first operand
            let mask: Vec<bool> = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| if pick_a { x >= y } else { x <= y })
                .collect();
            let ga: Vec<f64> = g
                .data()
                .iter()
                .zip(&mask)
                .map(|(&g, &m)| if m { g } else { 0.0 })
                .collect();
            let gb: Vec<f64> = g
                .data()
                .iter()
                .zip(&mask)
                .map(|(&g, &m)| if m { 0.0 } else { g })
                .collect();
            accumulate(adj, nodes, *a, Tensor::from_parts(g.shape().to_vec(), ga));
            accumulate(adj, nodes, *b, Tensor::from_parts(g.shape().to_vec(), gb));
        }
        Op::Neg(a) => accumulate(adj, nodes, *a, g.map(|v| -v)),
        Op::Scale(a, s) => accumulate(adj, nodes, *a, g.map(|v| v * s)),
        Op::AddScalar(a) => accumulate(adj, nodes, *a, g.clone()),
        Op::Square(a) => accumulate(adj, nodes, *a, zip_map(g, val(*a), |g, x| 2.0 * x * g)),
        Op::Exp(a) => accumulate(adj, nodes, *a, zip_map(g, &node.value, |g, y| g * y)),
        Op::Relu(a) => accumulate(
            adj,
            nodes,
            *a,
            zip_map(g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
        ),
        Op::Sigmoid(a) => accumulate(
            adj,
            nodes,
            *a,
            zip_map(g, &node.value, |g, s| g * s * (1.0 - s)),
        ),
        Op::LogSigmoid(a) => accumulate(
            adj,
            nodes,
            *a,
            zip_map(g, val(*a), |g, x| g * ops::sigmoid(-x)),
        ),
        Op::Atan(a) => accumulate(
            adj,
            nodes,
            *a,
            zip_map(g, val(*a), |g, x| g / (1.0 + x * x)),
        ),
        Op::Sum(a) => {
            let s = val(*a).shape().to_vec();
            accumulate(adj, nodes, *a, Tensor::full(&s, g.item()));
        }
        Op::Mean(a) => {
            let s = val(*a).shape().to_vec();
            let n = val(*a).len() as f64;
            accumulate(adj, nodes, *a, Tensor::full(&s, g.item() / n));
        }
        Op::Matmul(a, b) => {
            if tracked(*a) {
                accumulate(adj, nodes, *a, ops::matmul(g, &ops::transpose(val(*b))));
            }
            if tracked(*b) {
                accumulate(adj, nodes, *b, ops::matmul(&ops::transpose(val(*a)), g));
            }
        }
        Op::Transpose(a) => accumulate(adj, nodes, *a, ops::transpose(g)),
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
        } => {
            let (gx, gw, gb) = ops::conv2d_backward(
                val(*input),
                val(*weight),
                g,
                geom,
                tracked(*input),
                tracked(*weight),
            );
            if let Some(gx) = gx {
                accumulate(adj, nodes, *input, gx);
            }
            if let Some(gw) = gw {
                accumulate(adj, nodes, *weight, gw);
            }
            if let Some(b) = bias {
                accumulate(adj, nodes, *b, gb);
            }
        }
        Op::Reshape(a) => {
            let s = val(*a).shape().to_vec();
            accumulate(adj, nodes, *a, Tensor::from_parts(s, g.data().to_vec()));
        }
        Op::Broadcast(a) => {
            accumulate(adj, nodes, *a, ops::broadcast_backward(g, val(*a).shape()));
        }
        Op::Slice { src, axis, start } => {
            accumulate(
                adj,
                nodes,
                *src,
                ops::slice_backward(g, val(*src).shape(), *axis, *start),
            );
        }
        Op::Concat { inputs, axis } => {
            let mut start = 0;
            for id in inputs {
                let len = val(*id).shape()[*axis];
                if tracked(*id) {
                    accumulate(adj, nodes, *id, ops::slice(g, *axis, start, start + len));
                }
                start += len;
            }
        }
    }
}

// Arithmetic is fallible (shape checks), so these are methods, not operator traits.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(self) -> NodeId {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id.0].value)
    }

    pub fn to_tensor(self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(self) -> f64 {
        self.value().item()
    }

    /// Whether the value depends on a grad-flagged leaf.
    pub fn is_tracked(self) -> bool {
        self.tape.nodes.borrow()[self.id.0].tracked
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let out = self.value().map(f);
        self.tape.record(out, op)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>, AdError> {
        let out = {
            let (a, b) = (self.value(), other.value());
            if a.shape() != b.shape() {
                return Err(AdError::ShapeMismatch {
                    op: name,
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            zip_map(&a, &b, f)
        };
        Ok(self.tape.record(out, op))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn maximum(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "maximum", Op::Maximum(self.id, other.id), f64::max)
    }

    pub fn minimum(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "minimum", Op::Minimum(self.id, other.id), f64::min)
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |x| x * s)
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + s)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), ops::sigmoid)
    }

    pub fn log_sigmoid(self) -> Var<'t> {
        self.unary(Op::LogSigmoid(self.id), ops::log_sigmoid)
    }

    pub fn atan(self) -> Var<'t> {
        self.unary(Op::Atan(self.id), f64::atan)
    }

    pub fn sum(self) -> Var<'t> {
        let s: f64 = self.value().data().iter().sum();
        self.tape.record(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let m = {
            let v = self.value();
            v.data().iter().sum::<f64>() / v.len() as f64
        };
        self.tape.record(Tensor::scalar(m), Op::Mean(self.id))
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let out = {
            let (a, b) = (self.value(), other.value());
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(AdError::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            ops::matmul(&a, &b)
        };
        Ok(self.tape.record(out, Op::Matmul(self.id, other.id)))
    }

    pub fn transpose(self) -> Result<Var<'t>, AdError> {
        let out = {
            let a = self.value();
            if a.shape().len() != 2 {
                return Err(AdError::InvalidAttr {
                    op: "transpose",
                    msg: format!("expected a matrix, got shape {:?}", a.shape()),
                });
            }
            ops::transpose(&a)
        };
        Ok(self.tape.record(out, Op::Transpose(self.id)))
    }

    /// NCHW convolution with a square `[O,C,K,K]` kernel, zero padding and
    /// stride 1 or 2. `bias`, when given, has shape `[O]`.
    pub fn conv2d(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t>, AdError> {
        if stride != 1 && stride != 2 {
            return Err(AdError::InvalidAttr {
                op: "conv2d",
                msg: format!("stride must be 1 or 2, got {stride}"),
            });
        }
        let (out, geom) = {
            let x = self.value();
            let w = weight.value();
            let (xs, ws) = (x.shape(), w.shape());
            let mismatch = || AdError::ShapeMismatch {
                op: "conv2d",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            };
            if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] {
                return Err(mismatch());
            }
            let geom = ConvGeom::new(xs, ws, stride, padding).ok_or_else(mismatch)?;
            let b = bias.map(|b| b.value());
            if let Some(b) = &b {
                if b.shape() != [ws[0]] {
                    return Err(AdError::ShapeMismatch {
                        op: "conv2d bias",
                        lhs: b.shape().to_vec(),
                        rhs: vec![ws[0]],
                    });
                }
            }
            (ops::conv2d(&x, &w, b.as_deref(), &geom), geom)
        };
        Ok(self.tape.record(
            out,
            Op::Conv2d {
                input: self.id,
                weight: weight.id,
                bias: bias.map(|b| b.id),
                geom,
            },
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>, AdError> {
        let out = {
            let v = self.value();
            if shape.iter().product::<usize>() != v.len() || shape.contains(&0) {
                return Err(AdError::ShapeMismatch {
                    op: "reshape",
                    lhs: v.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            Tensor::from_parts(shape.to_vec(), v.data().to_vec())
        };
        Ok(self.tape.record(out, Op::Reshape(self.id)))
    }

    /// Expands extent-1 (or missing leading) axes to `shape`.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>, AdError> {
        let out = {
            let v = self.value();
            if !ops::broadcastable(v.shape(), shape) || shape.contains(&0) {
                return Err(AdError::ShapeMismatch {
                    op: "broadcast",
                    lhs: v.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            ops::broadcast(&v, shape)
        };
        Ok(self.tape.record(out, Op::Broadcast(self.id)))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>, AdError> {
        let out = {
            let v = self.value();
            if axis >= v.shape().len() || start >= end || end > v.shape()[axis] {
                return Err(AdError::InvalidAttr {
                    op: "slice",
                    msg: format!(
                        "range {start}..{end} on axis {axis} of shape {:?}",
                        v.shape()
                    ),
                });
            }
            ops::slice(&v, axis, start, end)
        };
        Ok(self.tape.record(
            out,
            Op::Slice {
                src: self.id,
                axis,
                start,
            },
        ))
    }

    /// Single element at a flat index, as a scalar.
    pub fn at(self, index: usize) -> Result<Var<'t>, AdError> {
        let len = self.value().len();
        self.reshape(&[len])?
            .slice(0, index, index + 1)?
            .reshape(&[])
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>, AdError> {
        let first = parts.first().ok_or(AdError::InvalidAttr {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let tape = first.tape;
        let out = {
            let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let s0 = vals[0].shape();
            if axis >= s0.len() {
                return Err(AdError::InvalidAttr {
                    op: "concat",
                    msg: format!("axis {axis} out of range for shape {s0:?}"),
                });
            }
            for v in &vals[1..] {
                let s = v.shape();
                let compatible = s.len() == s0.len()
                    && s.iter()
                        .zip(s0)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(AdError::ShapeMismatch {
                        op: "concat",
                        lhs: s0.to_vec(),
                        rhs: s.to_vec(),
                    });
                }
            }
            let refs: Vec<&Tensor> = vals.iter().map(|v| &**v).collect();
            ops::concat(&refs, axis)
        };
        Ok(tape.record(
            out,
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                axis,
            },
        ))
    }
}
