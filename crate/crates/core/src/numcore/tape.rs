//! Reverse-mode differentiation over a linear record of primitive ops.
//!
//! Nodes are appended in creation order, which is also a valid topological
//! order; `backward` walks the record in exact reverse, so identical tapes give
//! bit-identical gradients.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::error::{arg_err, shape_err, NumError, Result};
use super::{Scalar, Tensor};

enum Op<S> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddBroadcast(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    AddScalar(usize),
    LeakyRelu(usize, S),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    RowNorm(usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    SoftmaxCrossEntropy(usize, Vec<usize>, Tensor<S>),
    AvgPool2(usize),
    Conv2d(usize, Rc<Kernel<S>>),
    Upsample2(usize),
    Reshape(usize),
}

struct Node<S> {
    value: Rc<Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Square, odd-sized filter applied with clamp-to-edge borders.
#[derive(Clone, Debug)]
pub struct Kernel<S> {
    size: usize,
    taps: Vec<S>,
}

impl<S: Scalar> Kernel<S> {
    pub fn new(size: usize, taps: Vec<S>) -> Result<Self> {
        if size % 2 == 0 || taps.len() != size * size {
            return arg_err("kernel", format!("need odd size and size² taps, got {size} / {}", taps.len()));
        }
        Ok(Self { size, taps })
    }

    /// Normalized outer product of the binomial row of length `size`.
    pub fn binomial(size: usize) -> Result<Self> {
        let mut row = vec![1.0f64];
        for _ in 1..size {
            let mut next = vec![1.0; row.len() + 1];
            for i in 1..row.len() {
                next[i] = row[i - 1] + row[i];
            }
            row = next;
        }
        let total: f64 = row.iter().sum::<f64>().powi(2);
        let taps = row
            .iter()
            .flat_map(|a| row.iter().map(move |b| S::lit(a * b / total)))
            .collect();
        Self::new(size, taps)
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar> {
    tape: &'t Tape<S>,
    id: usize,
}

/// Gradients of a scalar loss with respect to every leaf that requires them.
pub struct Gradients<S> {
    by_leaf: HashMap<usize, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, var: &Var<'_, S>) -> Option<&Tensor<S>> {
        self.by_leaf.get(&var.id)
    }

    /// Gradient for `var`, or zeros of its shape when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: &Var<'_, S>) -> Tensor<S> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<S>, requires_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn param(&self, value: Tensor<S>) -> Var<'_, S> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.leaf(value, false)
    }

    fn value(&self, id: usize) -> Rc<Tensor<S>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn push(&self, op_name: &'static str, op: Op<S>, value: Tensor<S>, parents: &[usize]) -> Result<Var<'_, S>> {
        if !value.is_finite() {
            return Err(NumError::NonFinite { op: op_name });
        }
        let requires_grad = parents.iter().any(|&p| self.requires(p));
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis.
    pub fn concat(&self, parts: &[Var<'_, S>]) -> Result<Var<'_, S>> {
        if parts.is_empty() {
            return arg_err("concat", "no inputs");
        }
        let values: Vec<_> = parts.iter().map(|p| self.value(p.id)).collect();
        let rows = values[0].shape()[0];
        for v in &values {
            if v.shape().len() != 2 || v.shape()[0] != rows {
                return shape_err("concat", values[0].shape(), v.shape());
            }
        }
        let width: usize = values.iter().map(|v| v.shape()[1]).sum();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.push("concat", Op::Concat(ids.clone()), Tensor::new(&[rows, width], data)?, &ids)
    }

    /// Gradient of the scalar `loss` with respect to all grad-requiring leaves.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(NumError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut by_leaf = HashMap::new();
        if !root.requires_grad {
            return Ok(Gradients { by_leaf });
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::filled(root.value.shape(), S::one()));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                by_leaf.insert(id, g);
                continue;
            }
            for (parent, pg) in local_grads(&nodes, node, &g)? {
                if !nodes[parent].requires_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { by_leaf })
    }
}

fn zip_map<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

fn image_dims(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [b, h, w] => Some((b, h, w)),
        _ => None,
    }
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn local_grads<S: Scalar>(nodes: &[Node<S>], node: &Node<S>, g: &Tensor<S>) -> Result<Vec<(usize, Tensor<S>)>> {
    let val = |id: usize| nodes[id].value.as_ref();
    let out = node.value.as_ref();
    Ok(match &node.op {
        Op::Leaf => Vec::new(),
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            let mut da = vec![S::zero(); m * k];
            S::gemm(m, n, k, g.data(), false, bv.data(), true, &mut da, false);
            let mut db = vec![S::zero(); k * n];
            S::gemm(k, m, n, av.data(), true, g.data(), false, &mut db, false);
            vec![(*a, Tensor::new(&[m, k], da)?), (*b, Tensor::new(&[k, n], db)?)]
        }
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::AddBroadcast(a, b) => {
            let bv = val(*b);
            let w = bv.len();
            let mut db = vec![S::zero(); w];
            for chunk in g.data().chunks(w) {
                for (acc, &x) in db.iter_mut().zip(chunk) {
                    *acc += x;
                }
            }
            vec![(*a, g.clone()), (*b, Tensor::new(bv.shape(), db)?)]
        }
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
        Op::Mul(a, b) => vec![
            (*a, zip_map(g, val(*b), |x, y| x * y)),
            (*b, zip_map(g, val(*a), |x, y| x * y)),
        ],
        Op::Scale(a, c) => {
            let c = *c;
            vec![(*a, g.map(|x| x * c))]
        }
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::LeakyRelu(a, alpha) => {
            let alpha = *alpha;
            vec![(*a, zip_map(g, val(*a), |gx, x| if x > S::zero() { gx } else { gx * alpha }))]
        }
        Op::Tanh(a) => vec![(*a, zip_map(g, out, |gx, y| gx * (S::one() - y * y)))],
        Op::Exp(a) => vec![(*a, zip_map(g, out, |gx, y| gx * y))],
        Op::Log(a) => vec![(*a, zip_map(g, val(*a), |gx, x| gx / x))],
        Op::Square(a) => vec![(*a, zip_map(g, val(*a), |gx, x| gx * (x + x)))],
        Op::Sum(a) => vec![(*a, Tensor::filled(val(*a).shape(), g.item()))],
        Op::Mean(a) => {
            let av = val(*a);
            let n = S::lit(av.len() as f64);
            vec![(*a, Tensor::filled(av.shape(), g.item() / n))]
        }
        Op::RowSum(a) => {
            let av = val(*a);
            let w = av.row_len();
            let data = g.data().iter().flat_map(|&x| std::iter::repeat_n(x, w)).collect();
            vec![(*a, Tensor::new(av.shape(), data)?)]
        }
        Op::RowNorm(a) => {
            let av = val(*a);
            let w = av.row_len();
            let mut data = Vec::with_capacity(av.len());
            for (r, row) in av.data().chunks(w).enumerate() {
                let norm = out.data()[r];
                let scale = if norm > S::zero() { g.data()[r] / norm } else { S::zero() };
                data.extend(row.iter().map(|&x| x * scale));
            }
            vec![(*a, Tensor::new(av.shape(), data)?)]
        }
        Op::Concat(ids) => {
            let rows = out.shape()[0];
            let total = out.shape()[1];
            let mut offset = 0;
            let mut res = Vec::with_capacity(ids.len());
            for &id in ids {
                let w = val(id).shape()[1];
                let mut data = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                }
                res.push((id, Tensor::new(&[rows, w], data)?));
                offset += w;
            }
            res
        }
        Op::Slice(a, start) => {
            let av = val(*a);
            let (rows, total) = (av.shape()[0], av.shape()[1]);
            let w = out.shape()[1];
            let mut data = vec![S::zero(); rows * total];
            for r in 0..rows {
                data[r * total + start..r * total + start + w].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
            }
            vec![(*a, Tensor::new(av.shape(), data)?)]
        }
        Op::SoftmaxCrossEntropy(a, targets, probs) => {
            let classes = probs.shape()[1];
            let scale = g.item() / S::lit(targets.len() as f64);
            let mut data = probs.data().to_vec();
            for (r, &t) in targets.iter().enumerate() {
                data[r * classes + t] -= S::one();
            }
            data.iter_mut().for_each(|x| *x *= scale);
            vec![(*a, Tensor::new(probs.shape(), data)?)]
        }
        Op::AvgPool2(a) => {
            let av = val(*a);
            let (b, h, w) = image_dims(av.shape()).expect("checked at record time");
            let (oh, ow) = (h / 2, w / 2);
            let quarter = S::lit(0.25);
            let mut data = vec![S::zero(); av.len()];
            for bi in 0..b {
                for y in 0..oh {
                    for x in 0..ow {
                        let gv = g.data()[(bi * oh + y) * ow + x] * quarter;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            data[(bi * h + 2 * y + dy) * w + 2 * x + dx] = gv;
                        }
                    }
                }
            }
            vec![(*a, Tensor::new(av.shape(), data)?)]
        }
        Op::Conv2d(a, kernel) => {
            let av = val(*a);
            let (b, h, w) = image_dims(av.shape()).expect("checked at record time");
            let mut data = vec![S::zero(); av.len()];
            conv_adjoint(g.data(), &mut data, b, h, w, kernel);
            vec![(*a, Tensor::new(av.shape(), data)?)]
        }
        Op::Upsample2(a) => {
            let av = val(*a);
            let (b, h, w) = image_dims(av.shape()).expect("checked at record time");
            let (oh, ow) = (2 * h, 2 * w);
            let mut data = vec![S::zero(); av.len()];
            for bi in 0..b {
                for y in 0..oh {
                    for x in 0..ow {
                        data[(bi * h + y / 2) * w + x / 2] += g.data()[(bi * oh + y) * ow + x];
                    }
                }
            }
            vec![(*a, Tensor::new(av.shape(), data)?)]
        }
        Op::Reshape(a) => vec![(*a, g.clone().reshape(val(*a).shape())?)],
    })
}

fn conv_forward<S: Scalar>(input: &[S], out: &mut [S], b: usize, h: usize, w: usize, kernel: &Kernel<S>) {
    let r = (kernel.size / 2) as isize;
    for bi in 0..b {
        let img = &input[bi * h * w..(bi + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = S::zero();
                for i in 0..kernel.size {
                    let sy = clamp_index(y as isize + i as isize - r, h);
                    let row = &img[sy * w..(sy + 1) * w];
                    for j in 0..kernel.size {
                        let sx = clamp_index(x as isize + j as isize - r, w);
                        acc += kernel.taps[i * kernel.size + j] * row[sx];
                    }
                }
                out[(bi * h + y) * w + x] = acc;
            }
        }
    }
}

fn conv_adjoint<S: Scalar>(g: &[S], out: &mut [S], b: usize, h: usize, w: usize, kernel: &Kernel<S>) {
    let r = (kernel.size / 2) as isize;
    for bi in 0..b {
        let dst = &mut out[bi * h * w..(bi + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let gv = g[(bi * h + y) * w + x];
                for i in 0..kernel.size {
                    let sy = clamp_index(y as isize + i as isize - r, h);
                    for j in 0..kernel.size {
                        let sx = clamp_index(x as isize + j as isize - r, w);
                        dst[sy * w + sx] += kernel.taps[i * kernel.size + j] * gv;
                    }
                }
            }
        }
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<S>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    fn unary(self, name: &'static str, op: Op<S>, f: impl Fn(S) -> S) -> Result<Self> {
        let v = self.value().map(f);
        self.tape.push(name, op, v, &[self.id])
    }

    pub fn matmul(self, rhs: Self) -> Result<Self> {
        let (a, b) = (self.value(), rhs.value());
        let v = a.matmul(&b)?;
        self.tape.push("matmul", Op::MatMul(self.id, rhs.id), v, &[self.id, rhs.id])
    }

    /// Elementwise sum; `rhs` may also match a trailing suffix of `self`'s
    /// shape, in which case it is broadcast over the leading dimensions.
    pub fn add(self, rhs: Self) -> Result<Self> {
        let (a, b) = (self.value(), rhs.value());
        if a.shape() == b.shape() {
            let v = zip_map(&a, &b, |x, y| x + y);
            return self.tape.push("add", Op::Add(self.id, rhs.id), v, &[self.id, rhs.id]);
        }
        let (sa, sb) = (a.shape(), b.shape());
        if sb.len() < sa.len() && sa.ends_with(sb) {
            let w = b.len();
            let mut data = a.data().to_vec();
            for chunk in data.chunks_mut(w) {
                for (x, &y) in chunk.iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
            let v = Tensor::new(sa, data)?;
            return self.tape.push("add", Op::AddBroadcast(self.id, rhs.id), v, &[self.id, rhs.id]);
        }
        shape_err("add", sa, sb)
    }

    pub fn sub(self, rhs: Self) -> Result<Self> {
        let (a, b) = (self.value(), rhs.value());
        if a.shape() != b.shape() {
            return shape_err("sub", a.shape(), b.shape());
        }
        let v = zip_map(&a, &b, |x, y| x - y);
        self.tape.push("sub", Op::Sub(self.id, rhs.id), v, &[self.id, rhs.id])
    }

    pub fn mul(self, rhs: Self) -> Result<Self> {
        let (a, b) = (self.value(), rhs.value());
        if a.shape() != b.shape() {
            return shape_err("mul", a.shape(), b.shape());
        }
        let v = zip_map(&a, &b, |x, y| x * y);
        self.tape.push("mul", Op::Mul(self.id, rhs.id), v, &[self.id, rhs.id])
    }

    pub fn scale(self, c: f64) -> Result<Self> {
        let c = S::lit(c);
        self.unary("scale", Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(self, c: f64) -> Result<Self> {
        let c = S::lit(c);
        self.unary("add_scalar", Op::AddScalar(self.id), |x| x + c)
    }

    pub fn leaky_relu(self, alpha: f64) -> Result<Self> {
        let a = S::lit(alpha);
        self.unary("leaky_relu", Op::LeakyRelu(self.id, a), |x| if x > S::zero() { x } else { x * a })
    }

    pub fn tanh(self) -> Result<Self> {
        self.unary("tanh", Op::Tanh(self.id), |x| x.tanh())
    }

    pub fn exp(self) -> Result<Self> {
        self.unary("exp", Op::Exp(self.id), |x| x.exp())
    }

    pub fn log(self) -> Result<Self> {
        self.unary("log", Op::Log(self.id), |x| x.ln())
    }

    pub fn square(self) -> Result<Self> {
        self.unary("square", Op::Square(self.id), |x| x * x)
    }

    pub fn sum(self) -> Result<Self> {
        let s = self.value().data().iter().copied().sum();
        self.tape.push("sum", Op::Sum(self.id), Tensor::scalar(s), &[self.id])
    }

    pub fn mean(self) -> Result<Self> {
        let v = self.value();
        let s: S = v.data().iter().copied().sum();
        let m = s / S::lit(v.len() as f64);
        self.tape.push("mean", Op::Mean(self.id), Tensor::scalar(m), &[self.id])
    }

    /// Sum over every axis but the leading one: `[B, ...] -> [B]`.
    pub fn row_sum(self) -> Result<Self> {
        let v = self.value();
        if v.shape().len() < 2 {
            return arg_err("row_sum", format!("need a batch axis, got {:?}", v.shape()));
        }
        let data = v.data().chunks(v.row_len()).map(|r| r.iter().copied().sum()).collect();
        self.tape.push("row_sum", Op::RowSum(self.id), Tensor::new(&[v.rows()], data)?, &[self.id])
    }

    /// Mean over every axis but the leading one.
    pub fn row_mean(self) -> Result<Self> {
        let w = self.value().row_len();
        self.row_sum()?.scale(1.0 / w as f64)
    }

    /// Euclidean norm of each leading-axis slice; the gradient at a zero
    /// slice is taken as zero.
    pub fn row_norm(self) -> Result<Self> {
        let v = self.value();
        if v.shape().len() < 2 {
            return arg_err("row_norm", format!("need a batch axis, got {:?}", v.shape()));
        }
        let data = v
            .data()
            .chunks(v.row_len())
            .map(|r| r.iter().map(|&x| x * x).sum::<S>().sqrt())
            .collect();
        self.tape.push("row_norm", Op::RowNorm(self.id), Tensor::new(&[v.rows()], data)?, &[self.id])
    }

    /// Columns `[start, start + len)` of a 2-D tensor.
    pub fn slice_cols(self, start: usize, len: usize) -> Result<Self> {
        let v = self.value();
        if v.shape().len() != 2 || len == 0 || start + len > v.shape()[1] {
            return arg_err("slice", format!("columns {start}..{} of {:?}", start + len, v.shape()));
        }
        let (rows, total) = (v.shape()[0], v.shape()[1]);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&v.data()[r * total + start..r * total + start + len]);
        }
        self.tape.push("slice", Op::Slice(self.id, start), Tensor::new(&[rows, len], data)?, &[self.id])
    }

    /// Mean cross-entropy of row-wise softmax against class indices.
    pub fn softmax_cross_entropy(self, targets: &[usize]) -> Result<Self> {
        let v = self.value();
        if v.shape().len() != 2 || v.shape()[0] != targets.len() {
            return shape_err("softmax_cross_entropy", v.shape(), &[targets.len()]);
        }
        let classes = v.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return arg_err("softmax_cross_entropy", format!("target {bad} >= {classes} classes"));
        }
        let probs = softmax_rows(&v)?;
        let mut loss = S::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = v.row(r);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<S>().ln() + max;
            loss += lse - row[t];
        }
        loss = loss / S::lit(targets.len() as f64);
        self.tape.push(
            "softmax_cross_entropy",
            Op::SoftmaxCrossEntropy(self.id, targets.to_vec(), probs),
            Tensor::scalar(loss),
            &[self.id],
        )
    }

    /// 2x2 mean pooling of `[B, H, W]` images with even sides.
    pub fn avg_pool2(self) -> Result<Self> {
        let v = self.value();
        let Some((b, h, w)) = image_dims(v.shape()) else {
            return arg_err("avg_pool2", format!("need [B,H,W], got {:?}", v.shape()));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return arg_err("avg_pool2", format!("odd image size {h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let quarter = S::lit(0.25);
        let src = v.data();
        let mut data = Vec::with_capacity(b * oh * ow);
        for bi in 0..b {
            for y in 0..oh {
                for x in 0..ow {
                    let at = |dy: usize, dx: usize| src[(bi * h + 2 * y + dy) * w + 2 * x + dx];
                    data.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * quarter);
                }
            }
        }
        self.tape.push("avg_pool2", Op::AvgPool2(self.id), Tensor::new(&[b, oh, ow], data)?, &[self.id])
    }

    /// Same-size filtering of `[B, H, W]` images with a fixed kernel.
    pub fn conv2d(self, kernel: &Rc<Kernel<S>>) -> Result<Self> {
        let v = self.value();
        let Some((b, h, w)) = image_dims(v.shape()) else {
            return arg_err("conv2d", format!("need [B,H,W], got {:?}", v.shape()));
        };
        let mut data = vec![S::zero(); v.len()];
        conv_forward(v.data(), &mut data, b, h, w, kernel);
        self.tape.push("conv2d", Op::Conv2d(self.id, kernel.clone()), Tensor::new(v.shape(), data)?, &[self.id])
    }

    /// Nearest-neighbour 2x upsampling of `[B, H, W]` images.
    pub fn upsample2(self) -> Result<Self> {
        let v = self.value();
        let Some((b, h, w)) = image_dims(v.shape()) else {
            return arg_err("upsample2", format!("need [B,H,W], got {:?}", v.shape()));
        };
        let (oh, ow) = (2 * h, 2 * w);
        let src = v.data();
        let mut data = Vec::with_capacity(b * oh * ow);
        for bi in 0..b {
            for y in 0..oh {
                let row = &src[(bi * h + y / 2) * w..(bi * h + y / 2 + 1) * w];
                for x in 0..ow {
                    data.push(row[x / 2]);
                }
            }
        }
        self.tape.push("upsample2", Op::Upsample2(self.id), Tensor::new(&[b, oh, ow], data)?, &[self.id])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let v = (*self.value()).clone().reshape(shape)?;
        self.tape.push("reshape", Op::Reshape(self.id), v, &[self.id])
    }
}

/// Row-wise softmax of a 2-D tensor (not recorded).
pub fn softmax_rows<S: Scalar>(t: &Tensor<S>) -> Result<Tensor<S>> {
    if t.shape().len() != 2 {
        return arg_err("softmax", format!("need 2-D input, got {:?}", t.shape()));
    }
    let mut data = Vec::with_capacity(t.len());
    for r in 0..t.rows() {
        let row = t.row(r);
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let exps: Vec<S> = row.iter().map(|&x| (x - max).exp()).collect();
        let total: S = exps.iter().copied().sum();
        data.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::new(t.shape(), data)
}
