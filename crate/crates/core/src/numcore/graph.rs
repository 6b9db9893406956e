//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles in
//! creation order, so the tape is topologically sorted by construction.
//! [`Graph::backward`] walks it once in reverse. Graphs are built fresh for
//! every batch and are never reused after a backward pass.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{gemm, permute};
use super::tensor::{axis_dims, check_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    /// Dropout is the identity.
    Inference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Binary { a: Var, b: Var, kind: BinaryKind },
    Affine { x: Var, mul: f64 },
    Unary { x: Var, kind: UnaryKind },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, axis: usize, inv_std: Vec<f64> },
    Reshape { x: Var },
    Permute { x: Var, axes: Vec<usize> },
    Slice { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Sum { x: Var },
    SumAxis { x: Var, axis: usize },
    Dropout { x: Var, mask: Vec<f64> },
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Operation kinds addressable by name, for generic dispatch through
/// [`Graph::forward_op`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softmax { axis: usize },
    LayerNorm { axis: usize },
    Reshape { shape: Vec<usize> },
    Slice { axis: usize, start: usize, len: usize },
    Concat { axis: usize },
    ReduceSum { axis: Option<usize> },
    ReduceMean { axis: Option<usize> },
    Dropout { rate: f64 },
}

impl OpKind {
    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => Some(2),
            OpKind::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::MatMul => write!(f, "matmul"),
            OpKind::Add => write!(f, "add"),
            OpKind::Sub => write!(f, "sub"),
            OpKind::Mul => write!(f, "mul"),
            OpKind::Relu => write!(f, "relu"),
            OpKind::Tanh => write!(f, "tanh"),
            OpKind::Sigmoid => write!(f, "sigmoid"),
            OpKind::Exp => write!(f, "exp"),
            OpKind::Log => write!(f, "log"),
            OpKind::Softmax { axis } => write!(f, "softmax:{axis}"),
            OpKind::LayerNorm { axis } => write!(f, "layer-norm:{axis}"),
            OpKind::Reshape { shape } => {
                let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
                write!(f, "reshape:{}", dims.join("x"))
            }
            OpKind::Slice { axis, start, len } => write!(f, "slice:{axis}:{start}:{len}"),
            OpKind::Concat { axis } => write!(f, "concat:{axis}"),
            OpKind::ReduceSum { axis: None } => write!(f, "reduce-sum"),
            OpKind::ReduceSum { axis: Some(a) } => write!(f, "reduce-sum:{a}"),
            OpKind::ReduceMean { axis: None } => write!(f, "reduce-mean"),
            OpKind::ReduceMean { axis: Some(a) } => write!(f, "reduce-mean:{a}"),
            OpKind::Dropout { rate } => write!(f, "dropout:{rate}"),
        }
    }
}

/// Parses `name` or `name:arg[:arg...]`, e.g. `softmax:1`, `slice:0:2:3`,
/// `reshape:2x3`, `dropout:0.3`.
impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownOp(s.to_string());
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<usize> {
            args.get(i)
                .and_then(|a| a.parse().ok())
                .ok_or_else(unknown)
        };
        let opt_axis = || -> Result<Option<usize>> {
            match args.first() {
                None => Ok(None),
                Some(a) => a.parse().map(Some).map_err(|_| unknown()),
            }
        };
        let kind = match name {
            "matmul" => OpKind::MatMul,
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "relu" => OpKind::Relu,
            "tanh" => OpKind::Tanh,
            "sigmoid" => OpKind::Sigmoid,
            "exp" => OpKind::Exp,
            "log" => OpKind::Log,
            "softmax" => OpKind::Softmax { axis: num(0)? },
            "layer-norm" => OpKind::LayerNorm { axis: num(0)? },
            "reshape" => OpKind::Reshape {
                shape: args
                    .first()
                    .ok_or_else(unknown)?
                    .split('x')
                    .map(|d| d.parse().map_err(|_| unknown()))
                    .collect::<Result<_>>()?,
            },
            "slice" => OpKind::Slice {
                axis: num(0)?,
                start: num(1)?,
                len: num(2)?,
            },
            "concat" => OpKind::Concat { axis: num(0)? },
            "reduce-sum" => OpKind::ReduceSum { axis: opt_axis()? },
            "reduce-mean" => OpKind::ReduceMean { axis: opt_axis()? },
            "dropout" => OpKind::Dropout {
                rate: args
                    .first()
                    .and_then(|a| a.parse().ok())
                    .ok_or_else(unknown)?,
            },
            _ => return Err(unknown()),
        };
        Ok(kind)
    }
}

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Gradients produced by [`Graph::backward`], one per trainable leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf created by
    /// [`Graph::param`]. `None` for constants and intermediates.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for `vars` in order, moved out of the collection.
    pub fn take(&mut self, vars: &[Var]) -> Result<Vec<Tensor>> {
        vars.iter()
            .map(|v| {
                self.grads
                    .get_mut(v.0)
                    .and_then(Option::take)
                    .ok_or_else(|| Error::Invalid(format!("no gradient recorded for {v:?}")))
            })
            .collect()
    }
}

/// Differentiation tape. Confined to one thread; see the module docs.
pub struct Graph {
    nodes: Vec<Node>,
    mode: Mode,
    rng: ChaCha8Rng,
    consumed: bool,
}

impl Graph {
    /// A graph whose dropout masks are drawn from a generator seeded with
    /// `seed`.
    pub fn new(mode: Mode, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            consumed: false,
        }
    }

    pub fn inference() -> Self {
        Self::new(Mode::Inference, 0)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// The generator behind dropout masks, for callers that need other
    /// per-batch randomness tied to the same seed.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, true)
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, false)
    }

    fn leaf(&mut self, t: Tensor, needs_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("leaf".into()));
        }
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.into()));
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul { a, b } | Op::BatchMatMul { a, b, .. } | Op::Binary { a, b, .. } => {
                self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
            }
            Op::Affine { x, .. }
            | Op::Unary { x, .. }
            | Op::Softmax { x, .. }
            | Op::LayerNorm { x, .. }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::Slice { x, .. }
            | Op::Sum { x }
            | Op::SumAxis { x, .. }
            | Op::Dropout { x, .. } => self.nodes[x.0].needs_grad,
            Op::Concat { xs, .. } => xs.iter().any(|x| self.nodes[x.0].needs_grad),
            Op::SoftmaxCrossEntropy { logits, .. } => self.nodes[logits.0].needs_grad,
        };
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Generic dispatch by [`OpKind`].
    pub fn forward_op(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(Error::Invalid(format!(
                    "{kind} takes {n} inputs, got {}",
                    inputs.len()
                )));
            }
        } else if inputs.is_empty() {
            return Err(Error::Invalid(format!("{kind} needs at least one input")));
        }
        let x = inputs[0];
        match kind {
            OpKind::MatMul => self.matmul(x, inputs[1]),
            OpKind::Add => self.add(x, inputs[1]),
            OpKind::Sub => self.sub(x, inputs[1]),
            OpKind::Mul => self.mul(x, inputs[1]),
            OpKind::Relu => self.relu(x),
            OpKind::Tanh => self.tanh(x),
            OpKind::Sigmoid => self.sigmoid(x),
            OpKind::Exp => self.exp(x),
            OpKind::Log => self.log(x),
            OpKind::Softmax { axis } => self.softmax(x, *axis),
            OpKind::LayerNorm { axis } => self.layer_norm(x, *axis),
            OpKind::Reshape { shape } => self.reshape(x, shape),
            OpKind::Slice { axis, start, len } => self.slice(x, *axis, *start, *len),
            OpKind::Concat { axis } => self.concat(inputs, *axis),
            OpKind::ReduceSum { axis: None } => self.sum(x),
            OpKind::ReduceSum { axis: Some(a) } => self.sum_axis(x, *a),
            OpKind::ReduceMean { axis: None } => self.mean(x),
            OpKind::ReduceMean { axis: Some(a) } => self.mean_axis(x, *a),
            OpKind::Dropout { rate } => self.dropout(x, *rate),
        }
    }

    /// `m × k` times `k × n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b })
    }

    /// Batched product of `[B, M, K]` with `[B, K, N]`, or with `[B, N, K]`
    /// transposed when `transpose_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if transpose_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(Error::shape(
                "batch_matmul",
                format!("{sa:?} x {sb:?} (transpose_b={transpose_b})"),
            ));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &da[i * m * k..],
                false,
                &db[i * k * n..],
                transpose_b,
                &mut out[i * m * n..],
                0.0,
            );
        }
        self.push(
            "batch_matmul",
            vec![batch, m, n],
            out,
            Op::BatchMatMul { a, b, transpose_b },
        )
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind, name: &'static str) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(name, format!("{sa:?} vs {sb:?}")));
        }
        let shape = sa.to_vec();
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let nb = db.len();
        let out: Vec<f64> = da
            .chunks(nb)
            .flat_map(|chunk| {
                chunk.iter().zip(db).map(move |(&x, &y)| match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                })
            })
            .collect();
        self.push(name, shape, out, Op::Binary { a, b, kind })
    }

    /// Elementwise `a + b`; `b` may match a trailing suffix of `a`'s shape
    /// and is then broadcast over the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add, "add")
    }

    /// Elementwise `a - b` with the same broadcasting as [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub, "sub")
    }

    /// Elementwise `a * b` with the same broadcasting as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul, "mul")
    }

    /// `mul * x + add`.
    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| mul * v + add).collect();
        let shape = self.shape(x).to_vec();
        self.push("affine", shape, out, Op::Affine { x, mul })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.affine(x, c, 0.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.affine(x, 1.0, c)
    }

    fn unary(&mut self, x: Var, kind: UnaryKind, name: &'static str) -> Result<Var> {
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Relu => |v| v.max(0.0),
            UnaryKind::Tanh => f64::tanh,
            UnaryKind::Sigmoid => |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            UnaryKind::Exp => f64::exp,
            UnaryKind::Log => f64::ln,
        };
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(name, shape, out, Op::Unary { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Relu, "relu")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Tanh, "tanh")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Sigmoid, "sigmoid")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Exp, "exp")
    }

    /// Natural log; non-positive inputs surface as [`Error::NonFinite`].
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Log, "log")
    }

    fn check_axis(&self, x: Var, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(Error::shape(
                op,
                format!("axis {axis} out of range for {:?}", self.shape(x)),
            ));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "softmax")?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_dims(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        self.push("softmax", shape, out, Op::Softmax { x, axis })
    }

    /// Normalizes to zero mean and unit variance along `axis`, with no
    /// affine scale or shift.
    pub fn layer_norm(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "layer_norm")?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_dims(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        let mut inv_std = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mean = (0..len).map(|j| src[at(j)]).sum::<f64>() / len as f64;
                let var = (0..len).map(|j| (src[at(j)] - mean).powi(2)).sum::<f64>() / len as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for j in 0..len {
                    out[at(j)] = (src[at(j)] - mean) * inv;
                }
                inv_std.push(inv);
            }
        }
        self.push("layer_norm", shape, out, Op::LayerNorm { x, axis, inv_std })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(x)),
            ));
        }
        let data = self.value(x).data().to_vec();
        self.push("reshape", shape.to_vec(), data, Op::Reshape { x })
    }

    /// Output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes.iter().all(|&a| a < shape.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(Error::shape("permute", format!("axes {axes:?} for {shape:?}")));
        }
        let (out_shape, out) = permute(self.value(x).data(), &shape, axes);
        self.push(
            "permute",
            out_shape,
            out,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
        )
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis(x, axis, "slice")?;
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = axis_dims(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push("slice", out_shape, out, Op::Slice { x, axis, start })
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Invalid("concat of nothing".into()))?;
        self.check_axis(*first, axis, "concat")?;
        let base = self.shape(*first).to_vec();
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_dims(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis];
                let src = self.value(x).data();
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            "concat",
            shape,
            out,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        )
    }

    /// Sum of every entry, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push("sum", vec![1], vec![total], Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Sums out `axis`. A 1-D input reduces to shape `[1]`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "sum_axis")?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_dims(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let row = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != axis)
            .map(|(_, &d)| d)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        self.push("sum_axis", out_shape, out, Op::SumAxis { x, axis })
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "mean_axis")?;
        let len = self.shape(x)[axis] as f64;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / len)
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    /// Identity in inference mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if self.mode == Mode::Inference || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        self.push("dropout", shape, out, Op::Dropout { x, mask })
    }

    /// Mean softmax cross-entropy of `n × c` logits against class ids.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {shape:?} with {} targets", targets.len()),
            ));
        }
        let (n, c) = (shape[0], shape[1]);
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Invalid(format!("target {t} out of range for {c} classes")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + total.ln();
            loss += log_z - row[t];
            for j in 0..c {
                probs[i * c + j] = (row[j] - log_z).exp();
            }
        }
        self.push(
            "softmax_cross_entropy",
            vec![1],
            vec![loss / n as f64],
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Reverse pass from a one-element `loss`. Consumes the graph: further
    /// forward ops or a second backward fail with [`Error::GraphConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad && !matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf => {
                    if node.needs_grad {
                        leaf_grads[idx] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                    }
                }
                Op::MatMul { a, b } => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        gemm(m, n, k, &g, false, vb.data(), true, ga, 1.0);
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        gemm(k, m, n, va.data(), true, &g, false, gb, 1.0);
                    }
                }
                Op::BatchMatMul { a, b, transpose_b } => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (batch, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
                    let n = if *transpose_b { vb.shape()[1] } else { vb.shape()[2] };
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for i in 0..batch {
                            // dA = dC · op(B)^T
                            gemm(
                                m,
                                n,
                                k,
                                &g[i * m * n..],
                                false,
                                &vb.data()[i * k * n..],
                                !*transpose_b,
                                &mut ga[i * m * k..],
                                1.0,
                            );
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        for i in 0..batch {
                            if *transpose_b {
                                // B is n × k: dB = dC^T · A
                                gemm(
                                    n,
                                    m,
                                    k,
                                    &g[i * m * n..],
                                    true,
                                    &va.data()[i * m * k..],
                                    false,
                                    &mut gb[i * k * n..],
                                    1.0,
                                );
                            } else {
                                gemm(
                                    k,
                                    m,
                                    n,
                                    &va.data()[i * m * k..],
                                    true,
                                    &g[i * m * n..],
                                    false,
                                    &mut gb[i * k * n..],
                                    1.0,
                                );
                            }
                        }
                    }
                }
                Op::Binary { a, b, kind } => {
                    let nb = nodes[b.0].value.numel();
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        match kind {
                            BinaryKind::Add | BinaryKind::Sub => {
                                ga.iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                            }
                            BinaryKind::Mul => {
                                for (i, (d, s)) in ga.iter_mut().zip(&g).enumerate() {
                                    *d += s * vb[i % nb];
                                }
                            }
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        for (i, s) in g.iter().enumerate() {
                            gb[i % nb] += match kind {
                                BinaryKind::Add => *s,
                                BinaryKind::Sub => -s,
                                BinaryKind::Mul => s * va[i],
                            };
                        }
                    }
                }
                Op::Affine { x, mul } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        gx.iter_mut().zip(&g).for_each(|(d, s)| *d += mul * s);
                    }
                }
                Op::Unary { x, kind } => {
                    let xin = nodes[x.0].value.data();
                    let y = node.value.data();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for i in 0..g.len() {
                            gx[i] += g[i]
                                * match kind {
                                    UnaryKind::Relu => {
                                        if xin[i] > 0.0 {
                                            1.0
                                        } else {
                                            0.0
                                        }
                                    }
                                    UnaryKind::Tanh => 1.0 - y[i] * y[i],
                                    UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                                    UnaryKind::Exp => y[i],
                                    UnaryKind::Log => 1.0 / xin[i],
                                };
                        }
                    }
                }
                Op::Softmax { x, axis } => {
                    let y = node.value.data();
                    let (outer, len, inner) = axis_dims(node.value.shape(), *axis);
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for o in 0..outer {
                            for i in 0..inner {
                                let at = |j: usize| (o * len + j) * inner + i;
                                let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                                for j in 0..len {
                                    gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                                }
                            }
                        }
                    }
                }
                Op::LayerNorm { x, axis, inv_std } => {
                    let y = node.value.data();
                    let (outer, len, inner) = axis_dims(node.value.shape(), *axis);
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        let nf = len as f64;
                        for o in 0..outer {
                            for i in 0..inner {
                                let at = |j: usize| (o * len + j) * inner + i;
                                let inv = inv_std[o * inner + i];
                                let mean_g: f64 = (0..len).map(|j| g[at(j)]).sum::<f64>() / nf;
                                let mean_gy: f64 =
                                    (0..len).map(|j| g[at(j)] * y[at(j)]).sum::<f64>() / nf;
                                for j in 0..len {
                                    gx[at(j)] += inv * (g[at(j)] - mean_g - y[at(j)] * mean_gy);
                                }
                            }
                        }
                    }
                }
                Op::Reshape { x } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        gx.iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                    }
                }
                Op::Permute { x, axes } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        let mut inverse = vec![0; axes.len()];
                        for (i, &a) in axes.iter().enumerate() {
                            inverse[a] = i;
                        }
                        let (_, back) = permute(&g, node.value.shape(), &inverse);
                        gx.iter_mut().zip(&back).for_each(|(d, s)| *d += s);
                    }
                }
                Op::Slice { x, axis, start } => {
                    let full = nodes[x.0].value.shape()[*axis];
                    let (outer, len, inner) = axis_dims(node.value.shape(), *axis);
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for o in 0..outer {
                            let dst = (o * full + start) * inner;
                            let src = o * len * inner;
                            for j in 0..len * inner {
                                gx[dst + j] += g[src + j];
                            }
                        }
                    }
                }
                Op::Concat { xs, axis } => {
                    let total = node.value.shape()[*axis];
                    let (outer, _, inner) = axis_dims(node.value.shape(), *axis);
                    let mut offset = 0;
                    for &x in xs {
                        let len = nodes[x.0].value.shape()[*axis];
                        if let Some(gx) = slot(&mut grads, nodes, x) {
                            for o in 0..outer {
                                let src = (o * total + offset) * inner;
                                for j in 0..len * inner {
                                    gx[o * len * inner + j] += g[src + j];
                                }
                            }
                        }
                        offset += len;
                    }
                }
                Op::Sum { x } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        gx.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::SumAxis { x, axis } => {
                    let (outer, len, inner) = axis_dims(nodes[x.0].value.shape(), *axis);
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for o in 0..outer {
                            for j in 0..len {
                                for i in 0..inner {
                                    gx[(o * len + j) * inner + i] += g[o * inner + i];
                                }
                            }
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for i in 0..g.len() {
                            gx[i] += g[i] * mask[i];
                        }
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let n = targets.len();
                    let c = probs.len() / n;
                    let scale = g[0] / n as f64;
                    if let Some(gl) = slot(&mut grads, nodes, *logits) {
                        for (i, &t) in targets.iter().enumerate() {
                            for j in 0..c {
                                let onehot = if j == t { 1.0 } else { 0.0 };
                                gl[i * c + j] += scale * (probs[i * c + j] - onehot);
                            }
                        }
                    }
                }
            }
        }

        if leaf_grads.iter().flatten().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("backward".into()));
        }
        // Trainable leaves the loss never reached get zero gradients.
        for (i, node) in self.nodes.iter().enumerate() {
            if node.needs_grad && matches!(node.op, Op::Leaf) && leaf_grads[i].is_none() {
                leaf_grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

/// Zero-initialized gradient accumulator for `v`, or `None` when nothing
/// upstream of `v` is trainable.
fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.numel()]))
}
