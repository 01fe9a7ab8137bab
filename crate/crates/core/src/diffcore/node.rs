use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{matmul_raw, transpose_raw, Tensor};
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Operation tag recorded on every node of the graph.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    MatMul,
    Transpose,
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Recip,
    /// Sum of every entry, producing a rank-0 tensor.
    Sum,
    Mean,
    /// Reduce a rank ≤ 2 tensor onto a broadcast-compatible shape.
    SumTo(Vec<usize>),
    /// Repeat rows and/or columns up to the target shape.
    Broadcast(Vec<usize>),
    Reshape(Vec<usize>),
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    /// Embed into zeros: inverse of `Slice`.
    Pad { axis: usize, before: usize, total: usize },
    /// `scale * x + shift`, the constant elementwise scale when `shift == 0`.
    Affine { scale: f64, shift: f64 },
    /// Row-wise softmax.
    Softmax,
    /// Mean over rows of `-log softmax(logits)[label]`.
    SoftmaxXent(Rc<[usize]>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Recip => "recip",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumTo(_) => "sum_to",
            Op::Broadcast(_) => "broadcast",
            Op::Reshape(_) => "reshape",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Pad { .. } => "pad",
            Op::Affine { .. } => "elementwise_scale",
            Op::Softmax => "softmax",
            Op::SoftmaxXent(_) => "softmax_xent",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Leaf => Some(0),
            Op::Add | Op::Sub | Op::Mul | Op::MatMul => Some(2),
            Op::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

struct NodeInner {
    id: u64,
    value: Rc<Tensor>,
    op: Op,
    parents: Vec<DiffNode>,
    requires_grad: bool,
}

/// A value in a dynamically built computation graph.
///
/// Cloning is cheap (reference counted). Values are immutable once created.
/// Nodes that do not depend on any gradient-requiring leaf drop their
/// parent links, so constant subgraphs are not retained.
#[derive(Clone)]
pub struct DiffNode(Rc<NodeInner>);

impl fmt::Debug for DiffNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffNode")
            .field("id", &self.0.id)
            .field("op", &self.0.op.name())
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl DiffNode {
    fn make(value: Rc<Tensor>, op: Op, parents: Vec<DiffNode>, requires_grad: bool) -> Self {
        let id = NEXT_ID.fetch_add(1, Ordering::Relaxed);
        DiffNode(Rc::new(NodeInner { id, value, op, parents, requires_grad }))
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn variable(value: Tensor) -> Self {
        DiffNode::make(Rc::new(value), Op::Leaf, Vec::new(), true)
    }

    pub fn constant(value: Tensor) -> Self {
        DiffNode::make(Rc::new(value), Op::Leaf, Vec::new(), false)
    }

    pub fn scalar(v: f64) -> Self {
        DiffNode::constant(Tensor::scalar(v))
    }

    /// Constant sharing this node's value, cut from the graph.
    pub fn detach(&self) -> Self {
        DiffNode::make(self.0.value.clone(), Op::Leaf, Vec::new(), false)
    }

    /// Fresh gradient-requiring leaf sharing this node's value.
    pub fn detach_variable(&self) -> Self {
        DiffNode::make(self.0.value.clone(), Op::Leaf, Vec::new(), true)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn op(&self) -> &Op {
        &self.0.op
    }

    pub fn parents(&self) -> &[DiffNode] {
        &self.0.parents
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a one-element node.
    pub fn item(&self) -> f64 {
        self.0.value.item()
    }

    pub fn add(&self, other: &DiffNode) -> Result<DiffNode> {
        apply(Op::Add, &[self.clone(), other.clone()])
    }

    pub fn sub(&self, other: &DiffNode) -> Result<DiffNode> {
        apply(Op::Sub, &[self.clone(), other.clone()])
    }

    pub fn mul(&self, other: &DiffNode) -> Result<DiffNode> {
        apply(Op::Mul, &[self.clone(), other.clone()])
    }

    pub fn matmul(&self, other: &DiffNode) -> Result<DiffNode> {
        apply(Op::MatMul, &[self.clone(), other.clone()])
    }

    pub fn transpose(&self) -> Result<DiffNode> {
        self.unary(Op::Transpose)
    }

    pub fn relu(&self) -> Result<DiffNode> {
        self.unary(Op::Relu)
    }

    pub fn tanh(&self) -> Result<DiffNode> {
        self.unary(Op::Tanh)
    }

    pub fn sigmoid(&self) -> Result<DiffNode> {
        self.unary(Op::Sigmoid)
    }

    pub fn exp(&self) -> Result<DiffNode> {
        self.unary(Op::Exp)
    }

    pub fn ln(&self) -> Result<DiffNode> {
        self.unary(Op::Log)
    }

    pub fn recip(&self) -> Result<DiffNode> {
        self.unary(Op::Recip)
    }

    pub fn sum(&self) -> Result<DiffNode> {
        self.unary(Op::Sum)
    }

    pub fn mean(&self) -> Result<DiffNode> {
        self.unary(Op::Mean)
    }

    pub fn sum_to(&self, shape: &[usize]) -> Result<DiffNode> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        self.unary(Op::SumTo(shape.to_vec()))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<DiffNode> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        self.unary(Op::Broadcast(shape.to_vec()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<DiffNode> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        self.unary(Op::Reshape(shape.to_vec()))
    }

    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<DiffNode> {
        self.unary(Op::Slice { axis, start, end })
    }

    pub fn scale(&self, c: f64) -> Result<DiffNode> {
        self.unary(Op::Affine { scale: c, shift: 0.0 })
    }

    pub fn affine(&self, scale: f64, shift: f64) -> Result<DiffNode> {
        self.unary(Op::Affine { scale, shift })
    }

    pub fn softmax(&self) -> Result<DiffNode> {
        self.unary(Op::Softmax)
    }

    pub fn softmax_xent(&self, labels: &[usize]) -> Result<DiffNode> {
        self.unary(Op::SoftmaxXent(labels.into()))
    }

    /// `self + bias`, broadcasting `bias` over rows.
    pub fn add_row(&self, bias: &DiffNode) -> Result<DiffNode> {
        self.add(&bias.broadcast_to(self.shape())?)
    }

    fn unary(&self, op: Op) -> Result<DiffNode> {
        apply(op, std::slice::from_ref(self))
    }
}

/// Concatenate along `axis` (rank-1 vectors use axis 0).
pub fn concat(inputs: &[DiffNode], axis: usize) -> Result<DiffNode> {
    apply(Op::Concat { axis }, inputs)
}

/// Build a node by applying `op` to `inputs`, validating shapes and values.
pub fn apply(op: Op, inputs: &[DiffNode]) -> Result<DiffNode> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(Error::shape(op.name(), format!("expected {} inputs, got {}", n, inputs.len())));
        }
    } else if inputs.is_empty() {
        return Err(Error::shape(op.name(), "no inputs"));
    }
    if op == Op::Leaf {
        return Err(Error::Invalid("leaf nodes are created with DiffNode::variable/constant".into()));
    }
    let values: Vec<&Tensor> = inputs.iter().map(|n| n.value()).collect();
    let out = forward(&op, &values)?;
    if !out.all_finite() {
        return Err(Error::NonFinite { op: op.name() });
    }
    let requires_grad = inputs.iter().any(|n| n.requires_grad());
    let parents = if requires_grad { inputs.to_vec() } else { Vec::new() };
    Ok(DiffNode::make(Rc::new(out), op, parents, requires_grad))
}

fn same_shape(op: &Op, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op.name(), format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn rank2(op: &Op, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::shape(op.name(), format!("expected rank-2 input, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn dims2_of(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.len() {
        0 => Ok((1, 1)),
        1 => Ok((1, shape[0])),
        2 => Ok((shape[0], shape[1])),
        _ => Err(Error::shape("broadcast", format!("rank > 2 unsupported: {:?}", shape))),
    }
}

fn forward(op: &Op, x: &[&Tensor]) -> Result<Tensor> {
    let unary = |f: fn(f64) -> f64| x[0].map(f);
    Ok(match op {
        Op::Leaf => unreachable!(),
        Op::Add => {
            same_shape(op, x[0], x[1])?;
            x[0].zip_map(x[1], |a, b| a + b)
        }
        Op::Sub => {
            same_shape(op, x[0], x[1])?;
            x[0].zip_map(x[1], |a, b| a - b)
        }
        Op::Mul => {
            same_shape(op, x[0], x[1])?;
            x[0].zip_map(x[1], |a, b| a * b)
        }
        Op::MatMul => {
            let (m, k) = rank2(op, x[0])?;
            let (k2, n) = rank2(op, x[1])?;
            if k != k2 {
                return Err(Error::shape(op.name(), format!("{:?} x {:?}", x[0].shape(), x[1].shape())));
            }
            Tensor::new(vec![m, n], matmul_raw(x[0].data(), x[1].data(), m, k, n))?
        }
        Op::Transpose => {
            let (m, n) = rank2(op, x[0])?;
            Tensor::new(vec![n, m], transpose_raw(x[0].data(), m, n))?
        }
        Op::Relu => unary(|v| if v > 0.0 { v } else { 0.0 }),
        Op::Tanh => unary(f64::tanh),
        Op::Sigmoid => unary(sigmoid),
        Op::Exp => unary(f64::exp),
        Op::Log => {
            if let Some(v) = x[0].data().iter().find(|&&v| v <= 0.0) {
                return Err(Error::Domain { op: "log", detail: format!("non-positive input {v}") });
            }
            unary(f64::ln)
        }
        Op::Recip => {
            if x[0].data().contains(&0.0) {
                return Err(Error::Domain { op: "recip", detail: "zero input".into() });
            }
            unary(|v| 1.0 / v)
        }
        Op::Sum => Tensor::scalar(x[0].sum()),
        Op::Mean => {
            if x[0].is_empty() {
                return Err(Error::shape(op.name(), "empty input"));
            }
            Tensor::scalar(x[0].sum() / x[0].len() as f64)
        }
        Op::SumTo(target) => sum_to(x[0], target)?,
        Op::Broadcast(target) => broadcast(x[0], target)?,
        Op::Reshape(shape) => {
            let n: usize = shape.iter().product();
            if n != x[0].len() {
                return Err(Error::shape(op.name(), format!("{:?} -> {:?}", x[0].shape(), shape)));
            }
            x[0].reshaped(shape.clone())?
        }
        Op::Concat { axis } => concat_forward(*axis, x)?,
        Op::Slice { axis, start, end } => slice_forward(x[0], *axis, *start, *end)?,
        Op::Pad { axis, before, total } => pad_forward(x[0], *axis, *before, *total)?,
        Op::Affine { scale, shift } => {
            let (s, b) = (*scale, *shift);
            x[0].map(|v| s * v + b)
        }
        Op::Softmax => softmax_rows(x[0]),
        Op::SoftmaxXent(labels) => {
            let (rows, cols) = rank2(op, x[0])?;
            if labels.len() != rows {
                return Err(Error::shape(op.name(), format!("{} labels for {} rows", labels.len(), rows)));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
                return Err(Error::Invalid(format!("label {bad} out of range for {cols} classes")));
            }
            let mut total = 0.0;
            for (r, &label) in labels.iter().enumerate() {
                let row = &x[0].data()[r * cols..(r + 1) * cols];
                total += log_sum_exp(row) - row[label];
            }
            Tensor::scalar(total / rows as f64)
        }
    })
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    for &v in row {
        acc += (v - max).exp();
    }
    max + acc.ln()
}

fn softmax_rows(t: &Tensor) -> Tensor {
    let (rows, cols) = t.dims2();
    let mut out = t.clone();
    for r in 0..rows {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            acc += *v;
        }
        for v in row.iter_mut() {
            *v /= acc;
        }
    }
    out
}

fn sum_to(t: &Tensor, target: &[usize]) -> Result<Tensor> {
    let (r, c) = t.dims2();
    let (tr, tc) = dims2_of(target)?;
    if t.rank() > 2 || !(tr == r || tr == 1) || !(tc == c || tc == 1) {
        return Err(Error::shape("sum_to", format!("{:?} -> {:?}", t.shape(), target)));
    }
    let mut out = vec![0.0; tr * tc];
    for i in 0..r {
        for j in 0..c {
            let oi = if tr == 1 { 0 } else { i };
            let oj = if tc == 1 { 0 } else { j };
            out[oi * tc + oj] += t.data()[i * c + j];
        }
    }
    Tensor::new(target.to_vec(), out)
}

fn broadcast(t: &Tensor, target: &[usize]) -> Result<Tensor> {
    let (r, c) = t.dims2();
    let (tr, tc) = dims2_of(target)?;
    if t.rank() > 2 || !(r == tr || r == 1) || !(c == tc || c == 1) {
        return Err(Error::shape("broadcast", format!("{:?} -> {:?}", t.shape(), target)));
    }
    let mut out = Vec::with_capacity(tr * tc);
    for i in 0..tr {
        let si = if r == 1 { 0 } else { i };
        for j in 0..tc {
            let sj = if c == 1 { 0 } else { j };
            out.push(t.data()[si * c + sj]);
        }
    }
    Tensor::new(target.to_vec(), out)
}

fn concat_forward(axis: usize, x: &[&Tensor]) -> Result<Tensor> {
    let rank = x[0].rank();
    if x.iter().any(|t| t.rank() != rank) || rank == 0 || rank > 2 || axis >= rank {
        return Err(Error::shape("concat", format!("axis {axis}, shapes {:?}", shapes(x))));
    }
    if axis == 0 {
        // Row-major layout makes axis-0 concatenation a plain append.
        if rank == 2 && x.iter().any(|t| t.shape()[1] != x[0].shape()[1]) {
            return Err(Error::shape("concat", format!("column mismatch {:?}", shapes(x))));
        }
        let mut data = Vec::new();
        let mut lead = 0;
        for t in x {
            data.extend_from_slice(t.data());
            lead += t.shape()[0];
        }
        let mut shape = x[0].shape().to_vec();
        shape[0] = lead;
        return Tensor::new(shape, data);
    }
    let rows = x[0].shape()[0];
    if x.iter().any(|t| t.shape()[0] != rows) {
        return Err(Error::shape("concat", format!("row mismatch {:?}", shapes(x))));
    }
    let cols: usize = x.iter().map(|t| t.shape()[1]).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for t in x {
            let c = t.shape()[1];
            data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
        }
    }
    Tensor::new(vec![rows, cols], data)
}

fn shapes(x: &[&Tensor]) -> Vec<Vec<usize>> {
    x.iter().map(|t| t.shape().to_vec()).collect()
}

fn slice_forward(t: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    let rank = t.rank();
    if rank == 0 || rank > 2 || axis >= rank || start > end || end > t.shape()[axis] {
        return Err(Error::shape("slice", format!("{:?} axis {axis} [{start}, {end})", t.shape())));
    }
    if axis == 0 {
        let stride: usize = t.shape()[1..].iter().product();
        let mut shape = t.shape().to_vec();
        shape[0] = end - start;
        return Tensor::new(shape, t.data()[start * stride..end * stride].to_vec());
    }
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let mut data = Vec::with_capacity(rows * (end - start));
    for r in 0..rows {
        data.extend_from_slice(&t.data()[r * cols + start..r * cols + end]);
    }
    Tensor::new(vec![rows, end - start], data)
}

fn pad_forward(t: &Tensor, axis: usize, before: usize, total: usize) -> Result<Tensor> {
    let rank = t.rank();
    if rank == 0 || rank > 2 || axis >= rank || before + t.shape()[axis] > total {
        return Err(Error::shape("pad", format!("{:?} axis {axis} at {before} within {total}", t.shape())));
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = total;
    if axis == 0 {
        let stride: usize = t.shape()[1..].iter().product();
        let mut data = vec![0.0; total * stride];
        data[before * stride..before * stride + t.len()].copy_from_slice(t.data());
        return Tensor::new(shape, data);
    }
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let mut data = vec![0.0; rows * total];
    for r in 0..rows {
        data[r * total + before..r * total + before + cols].copy_from_slice(&t.data()[r * cols..(r + 1) * cols]);
    }
    Tensor::new(shape, data)
}

/// Vector-Jacobian products of `node` for upstream gradient `g`.
///
/// Built from differentiable ops so the result can itself be differentiated.
/// `parents` and `out` are either the live graph nodes or detached copies.
pub(super) fn vjp(
    op: &Op,
    parents: &[DiffNode],
    out: &DiffNode,
    g: &DiffNode,
    needed: &[bool],
) -> Result<Vec<Option<DiffNode>>> {
    let want = |i: usize| needed.get(i).copied().unwrap_or(false);
    let one = |v: Result<DiffNode>| -> Result<Vec<Option<DiffNode>>> { Ok(vec![Some(v?)]) };
    match op {
        Op::Leaf => Ok(Vec::new()),
        Op::Add => Ok(vec![want(0).then(|| g.clone()), want(1).then(|| g.clone())]),
        Op::Sub => Ok(vec![want(0).then(|| g.clone()), if want(1) { Some(g.scale(-1.0)?) } else { None }]),
        Op::Mul => Ok(vec![
            if want(0) { Some(g.mul(&parents[1])?) } else { None },
            if want(1) { Some(g.mul(&parents[0])?) } else { None },
        ]),
        Op::MatMul => Ok(vec![
            if want(0) { Some(g.matmul(&parents[1].transpose()?)?) } else { None },
            if want(1) { Some(parents[0].transpose()?.matmul(g)?) } else { None },
        ]),
        Op::Transpose => one(g.transpose()),
        Op::Relu => {
            let mask = parents[0].value().map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            one(g.mul(&DiffNode::constant(mask)))
        }
        Op::Tanh => {
            // 1 - y^2
            let d = out.mul(out)?.affine(-1.0, 1.0)?;
            one(g.mul(&d))
        }
        Op::Sigmoid => {
            let d = out.mul(&out.affine(-1.0, 1.0)?)?;
            one(g.mul(&d))
        }
        Op::Exp => one(g.mul(out)),
        Op::Log => one(g.mul(&parents[0].recip()?)),
        Op::Recip => one(g.mul(&out.mul(out)?)?.scale(-1.0)),
        Op::Sum => one(g.broadcast_to(parents[0].shape())),
        Op::Mean => {
            let n = parents[0].value().len() as f64;
            one(g.broadcast_to(parents[0].shape())?.scale(1.0 / n))
        }
        Op::SumTo(_) => one(g.broadcast_to(parents[0].shape())),
        Op::Broadcast(_) => one(g.sum_to(parents[0].shape())),
        Op::Reshape(_) => one(g.reshape(parents[0].shape())),
        Op::Concat { axis } => {
            let mut offset = 0;
            let mut grads = Vec::with_capacity(parents.len());
            for (i, p) in parents.iter().enumerate() {
                let width = p.shape()[*axis];
                grads.push(if want(i) { Some(g.slice(*axis, offset, offset + width)?) } else { None });
                offset += width;
            }
            Ok(grads)
        }
        Op::Slice { axis, start, .. } => {
            let total = parents[0].shape()[*axis];
            one(apply(Op::Pad { axis: *axis, before: *start, total }, std::slice::from_ref(g)))
        }
        Op::Pad { axis, before, .. } => {
            let width = parents[0].shape()[*axis];
            one(g.slice(*axis, *before, *before + width))
        }
        Op::Affine { scale, .. } => one(g.scale(*scale)),
        Op::Softmax => {
            let (rows, _) = out.value().dims2();
            let gs = g.mul(out)?;
            let row_dot = gs.sum_to(&[rows, 1])?.broadcast_to(out.shape())?;
            one(gs.sub(&out.mul(&row_dot)?))
        }
        Op::SoftmaxXent(labels) => {
            let logits = &parents[0];
            let (rows, cols) = logits.value().dims2();
            let mut onehot = Tensor::zeros(&[rows, cols]);
            for (r, &l) in labels.iter().enumerate() {
                onehot.data_mut()[r * cols + l] = 1.0;
            }
            let diff = logits.softmax()?.sub(&DiffNode::constant(onehot))?;
            let gb = g.broadcast_to(&[rows, cols])?.scale(1.0 / rows as f64)?;
            one(gb.mul(&diff))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> DiffNode {
        DiffNode::constant(Tensor::vector(data.to_vec()))
    }

    #[test]
    fn add_is_componentwise() {
        let out = v(&[1.0, 2.0]).add(&v(&[3.0, 4.0])).unwrap();
        assert_eq!(out.value().data(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_by_identity() {
        let i = DiffNode::constant(Tensor::eye(2));
        let b = DiffNode::constant(Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        assert_eq!(i.matmul(&b).unwrap().value().data(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(DiffNode::scalar(0.0).sigmoid().unwrap().item(), 0.5);
    }

    #[test]
    fn shape_error_names_op_and_shapes() {
        let err = v(&[1.0, 2.0]).add(&v(&[1.0, 2.0, 3.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add") && msg.contains("[2]") && msg.contains("[3]"), "{msg}");
        let a = DiffNode::constant(Tensor::zeros(&[2, 3]));
        let err = a.matmul(&a).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let err = v(&[1.0, 0.0]).ln().unwrap_err();
        assert!(matches!(err, Error::Domain { op: "log", .. }));
        assert!(v(&[-2.0]).ln().is_err());
    }

    #[test]
    fn overflow_is_reported() {
        let err = v(&[1000.0]).exp().unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "exp" }));
    }

    #[test]
    fn softmax_xent_is_stable_for_large_logits() {
        let logits = DiffNode::constant(Tensor::matrix(1, 3, vec![1000.0, 0.0, -1000.0]).unwrap());
        let loss = logits.softmax_xent(&[0]).unwrap();
        assert!(loss.item().abs() < 1e-12);
    }

    #[test]
    fn concat_and_slice() {
        let a = DiffNode::constant(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let b = DiffNode::constant(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = concat(&[a, b], 1).unwrap();
        assert_eq!(c.value().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert_eq!(c.slice(1, 1, 3).unwrap().value().data(), &[3.0, 4.0, 5.0, 6.0]);
        let r = concat(&[v(&[1.0]), v(&[2.0, 3.0])], 0).unwrap();
        assert_eq!(r.value().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn broadcast_and_sum_to_are_adjoint_shapes() {
        let row = DiffNode::constant(Tensor::vector(vec![1.0, 2.0]));
        let m = row.broadcast_to(&[3, 2]).unwrap();
        assert_eq!(m.value().data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(m.sum_to(&[2]).unwrap().value().data(), &[3.0, 6.0]);
        assert_eq!(m.sum_to(&[3, 1]).unwrap().value().data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn constants_do_not_keep_parents() {
        let out = v(&[1.0]).add(&v(&[2.0])).unwrap();
        assert!(out.parents().is_empty());
        assert!(!out.requires_grad());
        let x = DiffNode::variable(Tensor::vector(vec![1.0]));
        let y = x.add(&v(&[2.0])).unwrap();
        assert_eq!(y.parents().len(), 2);
        assert_eq!(y.parents()[0].id(), x.id());
    }
}
