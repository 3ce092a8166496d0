//! Reverse-mode differentiation over whole tensors.
//!
//! A [`Tape`] records every operation of one forward pass as a node. Calling
//! [`Tape::backward`] on a scalar node walks the nodes in reverse and returns
//! gradients for every parameter leaf that the loss depends on.

use std::collections::BTreeMap;

use crate::error::{NumError, Result};
use crate::params::{Gradients, ParamStore};
use crate::tensor::{gemm, softmax_in_place, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which key rows each query row may attend to.
#[derive(Clone, Debug, PartialEq)]
pub enum AttnMask {
    /// Every query sees every key.
    Full,
    /// All queries share one set of allowed key rows.
    Shared(Vec<usize>),
    /// Allowed key rows per query row.
    Rows(Vec<Vec<usize>>),
}

impl AttnMask {
    /// Builds a shared mask from a binary vector over key rows.
    pub fn from_binary(mask: &[bool]) -> Self {
        AttnMask::Shared(
            mask.iter()
                .enumerate()
                .filter_map(|(i, &m)| m.then_some(i))
                .collect(),
        )
    }

    fn keys_for(&self, row: usize) -> Option<&[usize]> {
        match self {
            AttnMask::Full => None,
            AttnMask::Shared(k) => Some(k),
            AttnMask::Rows(r) => Some(&r[row]),
        }
    }
}

#[derive(Debug)]
enum AttnProbs {
    Dense(Tensor),
    Sparse(Vec<Vec<f64>>),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    AddBias { x: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Affine { x: Var, scale: f64 },
    Relu { x: Var },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Softmax { x: Var },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        mask: AttnMask,
        scale: f64,
        probs: AttnProbs,
    },
    GatherRows { x: Var, idx: Vec<usize> },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Reshape { x: Var },
    MeanRows { x: Var },
    SumAll { x: Var },
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Tensor },
    RowMse { pred: Var, target: Vec<f64> },
    MinAll { x: Var, argmin: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    trainable: Option<Box<dyn Fn(&str) -> bool>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumError {
    NumError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            trainable: None,
        }
    }

    /// A tape on which only parameters accepted by `pred` receive gradients;
    /// all others are recorded as constants.
    pub fn with_trainable(pred: impl Fn(&str) -> bool + 'static) -> Self {
        Self {
            trainable: Some(Box::new(pred)),
            ..Self::new()
        }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient but is not a stored parameter.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Loads a named parameter; repeated loads return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.clone();
        let train = self.trainable.as_ref().map_or(true, |p| p(name));
        let v = if train {
            self.push(value, Op::Leaf, true)
        } else {
            self.push(value, Op::Leaf, false)
        };
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// `op(a) @ op(b)` where `op` optionally transposes a 2-D view.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, ka) = if ta { (av.cols(), av.rows()) } else { (av.rows(), av.cols()) };
        let (kb, n) = if tb { (bv.cols(), bv.rows()) } else { (bv.rows(), bv.cols()) };
        if ka != kb {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = Tensor::zeros(vec![m, n]);
        gemm(m, ka, n, 1.0, av.data(), ta, bv.data(), tb, 0.0, out.data_mut());
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Adds a bias row (length `cols`) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.len() != xv.cols() {
            return Err(shape_err("add_bias", xv, bv));
        }
        let mut out = xv.clone();
        let c = xv.cols();
        if c > 0 {
            for row in out.data_mut().chunks_mut(c) {
                for (o, bb) in row.iter_mut().zip(bv.data()) {
                    *o += bb;
                }
            }
        }
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(out, Op::AddBias { x, b }, ng))
    }

    fn zip_op(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        let ng = self.ng(x);
        self.push(out, Op::Affine { x, scale }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(out, Op::Relu { x }, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid { x }, ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let ng = self.ng(x);
        self.push(out, Op::Tanh { x }, ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = crate::tensor::softmax_rows(self.value(x));
        let ng = self.ng(x);
        self.push(out, Op::Softmax { x }, ng)
    }

    /// Scaled dot-product attention of already-projected queries `q` (n x d)
    /// over keys `k` (t x d) and values `v` (t x dv). Keys outside the mask
    /// receive exactly zero weight.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: AttnMask) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = (qv.rows(), qv.cols());
        let t = kv.rows();
        if kv.cols() != d {
            return Err(shape_err("attention(q,k)", qv, kv));
        }
        if vv.rows() != t {
            return Err(shape_err("attention(k,v)", kv, vv));
        }
        let dv = vv.cols();
        let scale = if d == 0 { 1.0 } else { 1.0 / (d as f64).sqrt() };
        let mut out = Tensor::zeros(vec![n, dv]);
        let probs = match &mask {
            AttnMask::Full => {
                if t == 0 && n > 0 {
                    return Err(NumError::DegenerateMask { row: 0 });
                }
                let mut s = Tensor::zeros(vec![n, t]);
                gemm(n, d, t, scale, qv.data(), false, kv.data(), true, 0.0, s.data_mut());
                let mut a = s;
                if t > 0 {
                    for row in a.data_mut().chunks_mut(t) {
                        softmax_in_place(row);
                    }
                }
                gemm(n, t, dv, 1.0, a.data(), false, vv.data(), false, 0.0, out.data_mut());
                AttnProbs::Dense(a)
            }
            _ => {
                if let AttnMask::Rows(r) = &mask {
                    if r.len() != n {
                        return Err(NumError::Shape {
                            op: "attention(mask rows)",
                            left: vec![r.len()],
                            right: vec![n],
                        });
                    }
                }
                let mut all = Vec::with_capacity(n);
                for i in 0..n {
                    let keys = mask.keys_for(i).unwrap_or(&[]);
                    if keys.is_empty() {
                        return Err(NumError::DegenerateMask { row: i });
                    }
                    let qi = qv.row_slice(i);
                    let mut w: Vec<f64> = Vec::with_capacity(keys.len());
                    for &j in keys {
                        if j >= t {
                            return Err(NumError::Shape {
                                op: "attention(mask index)",
                                left: vec![j],
                                right: vec![t],
                            });
                        }
                        w.push(scale * dot(qi, kv.row_slice(j)));
                    }
                    softmax_in_place(&mut w);
                    let oi = out.row_slice_mut(i);
                    for (&j, &a) in keys.iter().zip(&w) {
                        for (o, x) in oi.iter_mut().zip(vv.row_slice(j)) {
                            *o += a * x;
                        }
                    }
                    all.push(w);
                }
                AttnProbs::Sparse(all)
            }
        };
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                mask,
                scale,
                probs,
            },
            ng,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(NumError::Shape {
                op: "gather_rows",
                left: xv.shape().to_vec(),
                right: vec![bad],
            });
        }
        let out = xv.gather_rows(idx);
        let ng = self.ng(x);
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&vals)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            out,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts.first().map(|&p| self.value(p).rows()).unwrap_or(0);
        for &p in parts {
            if self.value(p).rows() != r {
                return Err(shape_err("concat_cols", self.value(parts[0]), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            out,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            ng,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(NumError::Shape {
                op: "slice_rows",
                left: xv.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let idx: Vec<usize> = (start..start + len).collect();
        let out = xv.gather_rows(&idx);
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceRows { x, start }, ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if start + len > c {
            return Err(NumError::Shape {
                op: "slice_cols",
                left: xv.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let r = xv.rows();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.row_slice(i)[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceCols { x, start }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Reshape { x }, ng))
    }

    /// Mean over rows, giving a `1 x cols` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(xv.row_slice(i)) {
                *o += v;
            }
        }
        if r > 0 {
            for o in &mut out {
                *o /= r as f64;
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::row(&out), Op::MeanRows { x }, ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, ng)
    }

    /// Sum over rows of `-log softmax(logits_row)[target_row]`.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (r, c) = (lv.rows(), lv.cols());
        if targets.len() != r || targets.iter().any(|&t| t >= c) {
            return Err(NumError::Shape {
                op: "softmax_xent",
                left: lv.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let probs = crate::tensor::softmax_rows(lv);
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = lv.row_slice(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Per-row mean squared error against a constant target row; `rows x 1`.
    pub fn row_mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let pv = self.value(pred);
        let (r, c) = (pv.rows(), pv.cols());
        if c != target.len() {
            return Err(NumError::Shape {
                op: "row_mse",
                left: pv.shape().to_vec(),
                right: vec![target.len()],
            });
        }
        let out: Vec<f64> = (0..r)
            .map(|i| {
                pv.row_slice(i)
                    .iter()
                    .zip(target)
                    .map(|(p, t)| (p - t) * (p - t))
                    .sum::<f64>()
                    / c as f64
            })
            .collect();
        let ng = self.ng(pred);
        Ok(self.push(
            Tensor::new(vec![r, 1], out)?,
            Op::RowMse {
                pred,
                target: target.to_vec(),
            },
            ng,
        ))
    }

    /// Minimum entry; the gradient flows to the first minimiser.
    pub fn min_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut argmin = 0;
        for (i, &v) in xv.data().iter().enumerate() {
            if v < xv.data()[argmin] {
                argmin = i;
            }
        }
        let m = xv.data()[argmin];
        let ng = self.ng(x);
        self.push(Tensor::scalar(m), Op::MinAll { x, argmin }, ng)
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Backward> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumError::Shape {
                op: "backward",
                left: lv.shape().to_vec(),
                right: vec![1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut params = Gradients::new();
        for (name, &v) in &self.params {
            if let Some(g) = &grads[v.0] {
                if self.nodes[v.0].needs_grad {
                    params.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(Backward { grads, params })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let ng = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = if *ta { (av.cols(), av.rows()) } else { (av.rows(), av.cols()) };
                let n = if *tb { bv.rows() } else { bv.cols() };
                if ng(*a) {
                    let ga = acc(grads, *a, av);
                    if *ta {
                        gemm(k, n, m, 1.0, bv.data(), *tb, g.data(), true, 1.0, ga.data_mut());
                    } else {
                        gemm(m, n, k, 1.0, g.data(), false, bv.data(), !*tb, 1.0, ga.data_mut());
                    }
                }
                if ng(*b) {
                    let gb = acc(grads, *b, bv);
                    if *tb {
                        gemm(n, m, k, 1.0, g.data(), true, av.data(), *ta, 1.0, gb.data_mut());
                    } else {
                        gemm(k, m, n, 1.0, av.data(), !*ta, g.data(), false, 1.0, gb.data_mut());
                    }
                }
            }
            Op::AddBias { x, b } => {
                if ng(*x) {
                    acc(grads, *x, val(*x)).add_assign_scaled(g, 1.0);
                }
                if ng(*b) {
                    let gb = acc(grads, *b, val(*b));
                    let c = g.cols();
                    for row in g.data().chunks(c) {
                        for (o, v) in gb.data_mut().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if ng(*a) {
                    acc(grads, *a, val(*a)).add_assign_scaled(g, 1.0);
                }
                if ng(*b) {
                    acc(grads, *b, val(*b)).add_assign_scaled(g, 1.0);
                }
            }
            Op::Sub { a, b } => {
                if ng(*a) {
                    acc(grads, *a, val(*a)).add_assign_scaled(g, 1.0);
                }
                if ng(*b) {
                    acc(grads, *b, val(*b)).add_assign_scaled(g, -1.0);
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                if ng(*a) {
                    let ga = acc(grads, *a, av);
                    for ((o, gg), y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *o += gg * y;
                    }
                }
                if ng(*b) {
                    let gb = acc(grads, *b, bv);
                    for ((o, gg), x) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += gg * x;
                    }
                }
            }
            Op::Affine { x, scale } => {
                acc(grads, *x, val(*x)).add_assign_scaled(g, *scale);
            }
            Op::Relu { x } => {
                let gx = acc(grads, *x, val(*x));
                for ((o, gg), y) in gx.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    if *y > 0.0 {
                        *o += gg;
                    }
                }
            }
            Op::Sigmoid { x } => {
                let gx = acc(grads, *x, val(*x));
                for ((o, gg), y) in gx.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    *o += gg * y * (1.0 - y);
                }
            }
            Op::Tanh { x } => {
                let gx = acc(grads, *x, val(*x));
                for ((o, gg), y) in gx.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    *o += gg * (1.0 - y * y);
                }
            }
            Op::Softmax { x } => {
                let gx = acc(grads, *x, val(*x));
                let c = g.cols();
                for ((grow, yrow), orow) in g
                    .data()
                    .chunks(c)
                    .zip(node.value.data().chunks(c))
                    .zip(gx.data_mut().chunks_mut(c))
                {
                    let dotp: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((o, gg), y) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o += y * (gg - dotp);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                mask,
                scale,
                probs,
            } => self.backprop_attention(*q, *k, *v, mask, *scale, probs, g, grads),
            Op::GatherRows { x, idx } => {
                let gx = acc(grads, *x, val(*x));
                for (r, &i) in idx.iter().enumerate() {
                    for (o, gg) in gx.row_slice_mut(i).iter_mut().zip(g.row_slice(r)) {
                        *o += gg;
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    if ng(p) {
                        let gp = acc(grads, p, val(p));
                        for (o, gg) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                            *o += gg;
                        }
                    }
                    offset += n;
                    debug_assert!(c == 0 || n % c == 0);
                }
            }
            Op::ConcatCols { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    if ng(p) {
                        let gp = acc(grads, p, val(p));
                        for i in 0..g.rows() {
                            let src = &g.row_slice(i)[offset..offset + pc];
                            for (o, gg) in gp.row_slice_mut(i).iter_mut().zip(src) {
                                *o += gg;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceRows { x, start } => {
                let c = g.cols();
                let gx = acc(grads, *x, val(*x));
                let dst = &mut gx.data_mut()[start * c..start * c + g.len()];
                for (o, gg) in dst.iter_mut().zip(g.data()) {
                    *o += gg;
                }
            }
            Op::SliceCols { x, start } => {
                let len = g.cols();
                let gx = acc(grads, *x, val(*x));
                for i in 0..g.rows() {
                    let dst = &mut gx.row_slice_mut(i)[*start..*start + len];
                    for (o, gg) in dst.iter_mut().zip(g.row_slice(i)) {
                        *o += gg;
                    }
                }
            }
            Op::Reshape { x } => {
                let gx = acc(grads, *x, val(*x));
                for (o, gg) in gx.data_mut().iter_mut().zip(g.data()) {
                    *o += gg;
                }
            }
            Op::MeanRows { x } => {
                let xv = val(*x);
                let r = xv.rows() as f64;
                let gx = acc(grads, *x, xv);
                let c = xv.cols();
                if c > 0 {
                    for row in gx.data_mut().chunks_mut(c) {
                        for (o, gg) in row.iter_mut().zip(g.data()) {
                            *o += gg / r;
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                let s = g.data()[0];
                for o in acc(grads, *x, val(*x)).data_mut() {
                    *o += s;
                }
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let s = g.data()[0];
                let gl = acc(grads, *logits, val(*logits));
                for (i, &t) in targets.iter().enumerate() {
                    let row = gl.row_slice_mut(i);
                    for (j, (o, p)) in row.iter_mut().zip(probs.row_slice(i)).enumerate() {
                        let y = if j == t { 1.0 } else { 0.0 };
                        *o += s * (p - y);
                    }
                }
            }
            Op::RowMse { pred, target } => {
                let pv = val(*pred);
                let c = pv.cols() as f64;
                let gp = acc(grads, *pred, pv);
                for i in 0..pv.rows() {
                    let gi = g.data()[i];
                    let src = pv.row_slice(i);
                    for ((o, p), t) in gp.row_slice_mut(i).iter_mut().zip(src).zip(target) {
                        *o += gi * 2.0 * (p - t) / c;
                    }
                }
            }
            Op::MinAll { x, argmin } => {
                acc(grads, *x, val(*x)).data_mut()[*argmin] += g.data()[0];
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        mask: &AttnMask,
        scale: f64,
        probs: &AttnProbs,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let (qv, kv, vv) = (
            &self.nodes[q.0].value,
            &self.nodes[k.0].value,
            &self.nodes[v.0].value,
        );
        let (n, d, t, dv) = (qv.rows(), qv.cols(), kv.rows(), vv.cols());
        let (ngq, ngk, ngv) = (
            self.nodes[q.0].needs_grad,
            self.nodes[k.0].needs_grad,
            self.nodes[v.0].needs_grad,
        );
        match probs {
            AttnProbs::Dense(a) => {
                if ngv {
                    let gv = acc(grads, v, vv);
                    gemm(t, n, dv, 1.0, a.data(), true, g.data(), false, 1.0, gv.data_mut());
                }
                if !(ngq || ngk) {
                    return;
                }
                let mut ds = Tensor::zeros(vec![n, t]);
                gemm(n, dv, t, 1.0, g.data(), false, vv.data(), true, 0.0, ds.data_mut());
                for (drow, arow) in ds.data_mut().chunks_mut(t.max(1)).zip(a.data().chunks(t.max(1))) {
                    let dotp: f64 = drow.iter().zip(arow).map(|(x, y)| x * y).sum();
                    for (dd, aa) in drow.iter_mut().zip(arow) {
                        *dd = aa * (*dd - dotp);
                    }
                }
                if ngq {
                    let gq = acc(grads, q, qv);
                    gemm(n, t, d, scale, ds.data(), false, kv.data(), false, 1.0, gq.data_mut());
                }
                if ngk {
                    let gk = acc(grads, k, kv);
                    gemm(t, n, d, scale, ds.data(), true, qv.data(), false, 1.0, gk.data_mut());
                }
            }
            AttnProbs::Sparse(rows) => {
                let mut gq = ngq.then(|| Tensor::zeros(qv.shape().to_vec()));
                let mut gk = ngk.then(|| Tensor::zeros(kv.shape().to_vec()));
                let mut gvv = ngv.then(|| Tensor::zeros(vv.shape().to_vec()));
                let mut da = Vec::new();
                for (i, w) in rows.iter().enumerate() {
                    let keys = mask.keys_for(i).unwrap_or(&[]);
                    let go = g.row_slice(i);
                    if let Some(gv) = gvv.as_mut() {
                        for (&j, &a) in keys.iter().zip(w) {
                            for (o, x) in gv.row_slice_mut(j).iter_mut().zip(go) {
                                *o += a * x;
                            }
                        }
                    }
                    if gq.is_none() && gk.is_none() {
                        continue;
                    }
                    da.clear();
                    da.extend(keys.iter().map(|&j| dot(go, vv.row_slice(j))));
                    let dotp: f64 = da.iter().zip(w).map(|(x, y)| x * y).sum();
                    let qi = qv.row_slice(i);
                    for ((&j, &a), &dj) in keys.iter().zip(w).zip(da.iter()) {
                        let ds = scale * a * (dj - dotp);
                        if let Some(gq) = gq.as_mut() {
                            for (o, x) in gq.row_slice_mut(i).iter_mut().zip(kv.row_slice(j)) {
                                *o += ds * x;
                            }
                        }
                        if let Some(gk) = gk.as_mut() {
                            for (o, x) in gk.row_slice_mut(j).iter_mut().zip(qi) {
                                *o += ds * x;
                            }
                        }
                    }
                }
                let _ = d;
                if let Some(t) = gq {
                    acc(grads, q, qv).add_assign_scaled(&t, 1.0);
                }
                if let Some(t) = gk {
                    acc(grads, k, kv).add_assign_scaled(&t, 1.0);
                }
                if let Some(t) = gvv {
                    acc(grads, v, vv).add_assign_scaled(&t, 1.0);
                }
            }
        }
    }
}

fn acc<'g>(grads: &'g mut [Option<Tensor>], v: Var, like: &Tensor) -> &'g mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape().to_vec()))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of a backward pass.
pub struct Backward {
    grads: Vec<Option<Tensor>>,
    params: Gradients,
}

impl Backward {
    pub fn params(&self) -> &Gradients {
        &self.params
    }

    pub fn into_params(self) -> Gradients {
        self.params
    }

    /// Gradient with respect to any recorded node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
