//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! Parameters enter as borrowed leaves tagged with their index in the
//! owning [`ParamSet`](super::ParamSet); [`Graph::backward`] then walks the
//! tape in reverse and [`Graph::param_grads`] collects the per-parameter
//! gradients. A fresh graph is built for every example.

use std::borrow::Cow;

use crate::error::{Error, Result};

use super::scalar::{gemm, MatRef};
use super::{Real, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Probabilities are floored here before the logarithm in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<T>,
    },
    MaxPoolFreq {
        x: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        x: Var,
        scale: T,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Concat(Vec<Var>),
    Softmax(Var),
    Mse {
        pred: Var,
        target: Vec<T>,
    },
    CrossEntropy {
        probs: Var,
        class: usize,
    },
    Sum(Vec<Var>),
}

struct Node<'p, T: Real> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<usize>,
}

pub struct Graph<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<'p, T: Real> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// A leaf that receives a gradient but is not a parameter.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Borrowed parameter leaf; its gradient is reported under `index`.
    pub fn param(&mut self, index: usize, value: &'p Tensor<T>) -> Var {
        let v = self.push(Cow::Borrowed(value), Op::Leaf, true);
        self.nodes[v.0].param = Some(index);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `x . w^T + b` for `x` of shape `[n, in]` or `[in]`, `w` of shape `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 {
            return Err(shape_err(format!("linear weight must be 2-D, got {ws:?}")));
        }
        let (out_dim, in_dim) = (ws[0], ws[1]);
        let (rows, vector) = match xs.as_slice() {
            [n] if *n == in_dim => (1, true),
            [r, n] if *n == in_dim => (*r, false),
            _ => {
                return Err(shape_err(format!(
                    "linear input {xs:?} does not match weight {ws:?}"
                )))
            }
        };
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(shape_err(format!(
                    "linear bias {:?} does not match {out_dim} outputs",
                    self.shape(b)
                )));
            }
        }
        let mut out = vec![T::zero(); rows * out_dim];
        gemm(
            MatRef::new(self.value(x).data(), rows, in_dim),
            MatRef::new(self.value(w).data(), out_dim, in_dim).t(),
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(out_dim) {
                row.iter_mut().zip(bias).for_each(|(o, &bb)| *o += bb);
            }
        }
        let shape = if vector { vec![out_dim] } else { vec![rows, out_dim] };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push_owned(
            Tensor::new(&shape, out)?,
            Op::Linear { x, w, b, rows },
            &inputs,
        ))
    }

    /// Stride-1 2-D convolution with "same" zero padding (`k / 2`, odd `k`).
    /// `x`: `[C, H, W]`, `w`: `[O, C, k, k]`, `b`: `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let [c, h, wd] = xs[..] else {
            return Err(shape_err(format!("conv2d input must be [C, H, W], got {xs:?}")));
        };
        let [o, wc, k, k2] = ws[..] else {
            return Err(shape_err(format!("conv2d kernel must be [O, C, k, k], got {ws:?}")));
        };
        if wc != c || k != k2 || k % 2 == 0 || h == 0 || wd == 0 {
            return Err(shape_err(format!(
                "conv2d kernel {ws:?} incompatible with input {xs:?}"
            )));
        }
        if self.shape(b) != [o] {
            return Err(shape_err(format!("conv2d bias must be [{o}]")));
        }
        let cols = im2col(self.value(x).data(), c, h, wd, k);
        let hw = h * wd;
        let ckk = c * k * k;
        let mut out = vec![T::zero(); o * hw];
        gemm(
            MatRef::new(self.value(w).data(), o, ckk),
            MatRef::new(&cols, ckk, hw),
            &mut out,
            false,
        );
        let bias = self.value(b).data();
        for (row, &bb) in out.chunks_exact_mut(hw).zip(bias) {
            row.iter_mut().for_each(|v| *v += bb);
        }
        Ok(self.push_owned(
            Tensor::new(&[o, h, wd], out)?,
            Op::Conv2d { x, w, b, cols },
            &[x, w, b],
        ))
    }

    /// Max pooling with a `k x 1` window along the frequency (height) axis.
    /// Ties resolve to the lowest index.
    pub fn maxpool_freq(&mut self, x: Var, k: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let [c, h, wd] = xs[..] else {
            return Err(shape_err(format!("maxpool input must be [C, H, W], got {xs:?}")));
        };
        if k == 0 || h < k {
            return Err(shape_err(format!("pool size {k} exceeds height {h}")));
        }
        let ho = h / k;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * ho * wd);
        let mut argmax = Vec::with_capacity(c * ho * wd);
        for ch in 0..c {
            for i in 0..ho {
                for t in 0..wd {
                    let mut best = (ch * h + i * k) * wd + t;
                    for j in 1..k {
                        let idx = (ch * h + i * k + j) * wd + t;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push_owned(
            Tensor::new(&[c, ho, wd], out)?,
            Op::MaxPoolFreq { x, argmax },
            &[x],
        ))
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect())
            .expect("same shape");
        self.push_owned(out, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, |v| v.tanh(), Op::Tanh(x))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        self.map(x, move |v| scale * v + shift, Op::Affine { x, scale })
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>, name: &str) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(shape_err(format!(
                "{name}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        let out = Tensor::new(self.shape(a), data)?;
        Ok(self.push_owned(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |p, q| p + q, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |p, q| p - q, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |p, q| p * q, Op::Mul(a, b), "mul")
    }

    /// `out[i] = x.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(shape_err(format!("gather index {bad} out of {}", src.len())));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push_owned(out, Op::Gather { x, index }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        self.gather(x, (0..n).collect(), shape)
    }

    /// Contiguous flat range `[offset, offset + len)` as a 1-D tensor.
    pub fn slice(&mut self, x: Var, offset: usize, len: usize) -> Result<Var> {
        self.gather(x, (offset..offset + len).collect(), &[len])
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [r, c] = s[..] else {
            return Err(shape_err(format!("row() needs a 2-D tensor, got {s:?}")));
        };
        if i >= r {
            return Err(shape_err(format!("row {i} out of {r}")));
        }
        self.slice(x, i * c, c)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [r, c] = s[..] else {
            return Err(shape_err(format!("transpose needs a 2-D tensor, got {s:?}")));
        };
        let index = (0..c).flat_map(|j| (0..r).map(move |i| i * c + j)).collect();
        self.gather(x, index, &[c, r])
    }

    /// Flattens and joins the inputs into one 1-D tensor.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat of nothing".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let n = data.len();
        Ok(self.push_owned(Tensor::new(&[n], data)?, Op::Concat(parts.to_vec()), parts))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let width = rows.first().map(|&r| self.value(r).len()).unwrap_or(0);
        if rows.iter().any(|&r| self.value(r).len() != width) {
            return Err(shape_err("stack_rows with ragged rows".into()));
        }
        let flat = self.concat(rows)?;
        self.reshape(flat, &[rows.len(), width])
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), softmax(t.data())).expect("same shape");
        self.push_owned(out, Op::Softmax(x), &[x])
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || p.is_empty() {
            return Err(shape_err(format!(
                "mse: prediction has {} values, target {}",
                p.len(),
                target.len()
            )));
        }
        let loss = mse(p, target);
        Ok(self.push_owned(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            &[pred],
        ))
    }

    /// `-log(max(p[class], 1e-12))` for a probability vector.
    pub fn cross_entropy(&mut self, probs: Var, class: usize) -> Result<Var> {
        let p = self.value(probs).data();
        if class >= p.len() {
            return Err(Error::Range(format!("class {class} out of {} classes", p.len())));
        }
        let loss = -p[class].max(T::from_f64(PROB_FLOOR)).ln();
        Ok(self.push_owned(
            Tensor::scalar(loss),
            Op::CrossEntropy { probs, class },
            &[probs],
        ))
    }

    /// Sum of scalars.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let mut total = T::zero();
        for &p in parts {
            if self.value(p).len() != 1 {
                return Err(shape_err("sum() takes scalars".into()));
            }
            total += self.value(p).data()[0];
        }
        Ok(self.push_owned(Tensor::scalar(total), Op::Sum(parts.to_vec()), parts))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.value(output).len() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(output)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[output.0] = Some(vec![T::one()]);
        for i in (0..=output.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        // Inputs always precede their outputs on the tape.
        let (before, rest) = self.nodes.split_at(i);
        let node = &rest[0];
        let val = |v: Var| -> &Tensor<T> { &before[v.0].value };
        let out = node.value.data();
        let mut updates: Vec<(Var, Vec<T>)> = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b, rows } => {
                let ws = val(*w).shape();
                let (out_dim, in_dim) = (ws[0], ws[1]);
                if before[x.0].requires_grad {
                    let mut dx = vec![T::zero(); rows * in_dim];
                    gemm(
                        MatRef::new(g, *rows, out_dim),
                        MatRef::new(val(*w).data(), out_dim, in_dim),
                        &mut dx,
                        false,
                    );
                    updates.push((*x, dx));
                }
                if before[w.0].requires_grad {
                    let mut dw = vec![T::zero(); out_dim * in_dim];
                    gemm(
                        MatRef::new(g, *rows, out_dim).t(),
                        MatRef::new(val(*x).data(), *rows, in_dim),
                        &mut dw,
                        false,
                    );
                    updates.push((*w, dw));
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); out_dim];
                    for row in g.chunks_exact(out_dim) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    updates.push((*b, db));
                }
            }
            Op::Conv2d { x, w, b, cols } => {
                let xs = val(*x).shape();
                let (c, h, wd) = (xs[0], xs[1], xs[2]);
                let ws = val(*w).shape();
                let (o, k) = (ws[0], ws[2]);
                let hw = h * wd;
                let ckk = c * k * k;
                if before[w.0].requires_grad {
                    let mut dw = vec![T::zero(); o * ckk];
                    gemm(
                        MatRef::new(g, o, hw),
                        MatRef::new(cols, ckk, hw).t(),
                        &mut dw,
                        false,
                    );
                    updates.push((*w, dw));
                }
                if before[b.0].requires_grad {
                    updates.push((*b, g.chunks_exact(hw).map(|r| r.iter().copied().sum()).collect()));
                }
                if before[x.0].requires_grad {
                    let mut dcols = vec![T::zero(); ckk * hw];
                    gemm(
                        MatRef::new(val(*w).data(), o, ckk).t(),
                        MatRef::new(g, o, hw),
                        &mut dcols,
                        false,
                    );
                    updates.push((*x, col2im(&dcols, c, h, wd, k)));
                }
            }
            Op::MaxPoolFreq { x, argmax } => {
                let mut dx = vec![T::zero(); val(*x).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                updates.push((*x, dx));
            }
            Op::Relu(x) => {
                let dx = out
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| if y > T::zero() { gv } else { T::zero() })
                    .collect();
                updates.push((*x, dx));
            }
            Op::Sigmoid(x) => {
                let dx = out
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * y * (T::one() - y))
                    .collect();
                updates.push((*x, dx));
            }
            Op::Tanh(x) => {
                let dx = out
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * (T::one() - y * y))
                    .collect();
                updates.push((*x, dx));
            }
            Op::Add(a, b) => {
                updates.push((*a, g.to_vec()));
                updates.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                updates.push((*a, g.to_vec()));
                updates.push((*b, g.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                updates.push((*a, g.iter().zip(bv).map(|(&gv, &q)| gv * q).collect()));
                updates.push((*b, g.iter().zip(av).map(|(&gv, &p)| gv * p).collect()));
            }
            Op::Affine { x, scale } => {
                updates.push((*x, g.iter().map(|&v| v * *scale).collect()));
            }
            Op::Gather { x, index } => {
                let mut dx = vec![T::zero(); val(*x).len()];
                for (&src, &gv) in index.iter().zip(g) {
                    dx[src] += gv;
                }
                updates.push((*x, dx));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    updates.push((p, g[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::Softmax(x) => {
                let dot: T = out.iter().zip(g).map(|(&y, &gv)| y * gv).sum();
                updates.push((*x, out.iter().zip(g).map(|(&y, &gv)| y * (gv - dot)).collect()));
            }
            Op::Mse { pred, target } => {
                let p = val(*pred).data();
                let scale = T::from_f64(2.0) / T::from_f64(p.len() as f64) * g[0];
                updates.push((
                    *pred,
                    p.iter().zip(target).map(|(&a, &t)| scale * (a - t)).collect(),
                ));
            }
            Op::CrossEntropy { probs, class } => {
                let p = val(*probs).data();
                let mut dp = vec![T::zero(); p.len()];
                if p[*class] > T::from_f64(PROB_FLOOR) {
                    dp[*class] = -g[0] / p[*class];
                }
                updates.push((*probs, dp));
            }
            Op::Sum(parts) => {
                for &p in parts {
                    updates.push((p, vec![g[0]]));
                }
            }
        }
        for (v, d) in updates {
            if let Some(acc) = self.acc(v) {
                acc.iter_mut().zip(d).for_each(|(a, b)| *a += b);
            }
        }
    }

    /// Gradient of the last `backward` output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients summed per parameter index (`None` for parameters not on the path).
    pub fn param_grads(&self, n_params: usize) -> Vec<Option<Vec<T>>> {
        let mut out: Vec<Option<Vec<T>>> = (0..n_params).map(|_| None).collect();
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if let (Some(idx), Some(g)) = (node.param, g) {
                match &mut out[idx] {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softmax (max-shifted).
pub fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn mse<T: Real>(pred: &[T], target: &[T]) -> T {
    let n = T::from_f64(pred.len() as f64);
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<T>()
        / n
}

fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let hw = h * w;
    let mut cols = vec![T::zero(); c * k * k * hw];
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ch * k + ki) * k + kj) * hw;
                for y in 0..h {
                    let sy = y + ki;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let src_row = (ch * h + sy - pad) * w;
                    let dst = row + y * w;
                    // output column xo reads input column xo + kj - pad
                    let lo = pad.saturating_sub(kj);
                    let hi = (w + pad).saturating_sub(kj).min(w);
                    for xo in lo..hi {
                        cols[dst + xo] = x[src_row + xo + kj - pad];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let hw = h * w;
    let mut x = vec![T::zero(); c * hw];
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ch * k + ki) * k + kj) * hw;
                for y in 0..h {
                    let sy = y + ki;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let dst_row = (ch * h + sy - pad) * w;
                    let src = row + y * w;
                    let lo = pad.saturating_sub(kj);
                    let hi = (w + pad).saturating_sub(kj).min(w);
                    for xo in lo..hi {
                        x[dst_row + xo + kj - pad] += cols[src + xo];
                    }
                }
            }
        }
    }
    x
}
