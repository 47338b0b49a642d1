//! Taped reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates adjoints for
//! every node that depends on a trainable leaf. Graphs are append-only, so a
//! forward pass can be extended after intermediate values have been read
//! (the trainer uses this to run the auxiliary step between encoding and the
//! main loss).

use crate::error::{Error, Result};
use crate::tensor::{matmul_n, matmul_t, matmul_tn, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `x · wᵀ` with `x: [.., in]`, `w: [out, in]`.
    MatMulT(Var, Var),
    /// Row-broadcast add of a vector to every row.
    AddRow(Var, Var),
    /// Row-broadcast multiply by a vector.
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Relu(Var),
    LogAbs(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherCols(Var, Vec<usize>),
    Sum(Var),
    SumCols(Var),
    Reshape(Var),
    SoftmaxXent(Var, Vec<usize>),
    BceLogits(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only computation tape.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// influence the loss through any trainable path.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else if v < -30.0 {
        v.exp()
    } else {
        v.exp().ln_1p()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` with no gradient linkage to anything upstream.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || xv.cols() != wv.shape()[1] {
            return Err(Error::shape(format!(
                "matmul: input {:?} incompatible with weight {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let (rows, inner, out) = (xv.rows(), xv.cols(), wv.shape()[0]);
        let mut data = vec![0.0; rows * out];
        matmul_t(xv.data(), wv.data(), rows, inner, out, &mut data, false);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = out;
        let value = Tensor::new(shape, data)?;
        let g = self.grad_of(&[x, w]);
        Ok(self.push(value, Op::MatMulT(x, w), g))
    }

    fn row_op(&mut self, x: Var, b: Var, mul: bool) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.len() != xv.cols() {
            return Err(Error::shape(format!(
                "row broadcast: {:?} against {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let c = xv.cols();
        let mut value = xv.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            let s = bv.data()[i % c];
            if mul {
                *v *= s;
            } else {
                *v += s;
            }
        }
        let g = self.grad_of(&[x, b]);
        let op = if mul { Op::MulRow(x, b) } else { Op::AddRow(x, b) };
        Ok(self.push(value, op, g))
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        self.row_op(x, b, false)
    }

    pub fn mul_row(&mut self, x: Var, s: Var) -> Result<Var> {
        self.row_op(x, s, true)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), f)?;
        let g = self.grad_of(&[a, b]);
        Ok(self.push(value, op, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let g = self.grad_of(&[x]);
        self.push(value, op, g)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn log_abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs().ln(), Op::LogAbs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if start + len > c || len == 0 {
            return Err(Error::shape(format!("slice_cols {start}+{len} of {c}")));
        }
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.data()[r * c + start..r * c + start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, data)?;
        let g = self.grad_of(&[x]);
        Ok(self.push(value, Op::SliceCols(x, start), g))
    }

    /// Rows `start..start+len` of `x` viewed as `[rows, cols]`; result is 2-D.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if start + len > xv.rows() || len == 0 {
            return Err(Error::shape(format!("slice_rows {start}+{len} of {}", xv.rows())));
        }
        let value = Tensor::new(vec![len, c], xv.data()[start * c..(start + len) * c].to_vec())?;
        let g = self.grad_of(&[x]);
        Ok(self.push(value, Op::SliceRows(x, start), g))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat_cols: row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], data)?;
        let g = self.grad_of(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), g))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::shape("concat_rows: column counts differ"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols;
        let value = Tensor::new(vec![rows, cols], data)?;
        let g = self.grad_of(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), g))
    }

    /// Column gather: `out[r, j] = x[r, idx[j]]`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if idx.is_empty() || idx.iter().any(|&i| i >= c) {
            return Err(Error::shape("gather_cols: index out of range"));
        }
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            let row = xv.row(r);
            data.extend(idx.iter().map(|&i| row[i]));
        }
        let value = Tensor::new(vec![rows, idx.len()], data)?;
        let g = self.grad_of(&[x]);
        Ok(self.push(value, Op::GatherCols(x, idx.to_vec()), g))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let g = self.grad_of(&[x]);
        self.push(value, Op::Sum(x), g)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums: `[rows, cols] -> [rows]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<f64> = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let value = Tensor::vector(data);
        let g = self.grad_of(&[x]);
        self.push(value, Op::SumCols(x), g)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let g = self.grad_of(&[x]);
        Ok(self.push(value, Op::Reshape(x), g))
    }

    /// Mean softmax cross-entropy of `logits: [B, C]` against class indices.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let c = lv.cols();
        if lv.rows() != labels.len() || labels.iter().any(|&l| l >= c) {
            return Err(Error::shape("softmax_xent: labels do not match logits"));
        }
        let mut total = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let row = lv.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[l];
        }
        let value = Tensor::scalar(total / labels.len() as f64);
        let g = self.grad_of(&[logits]);
        Ok(self.push(value, Op::SoftmaxXent(logits, labels.to_vec()), g))
    }

    /// Mean binary cross-entropy with logits; `targets` in `[0, 1]`.
    pub fn bce_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != targets.len() {
            return Err(Error::shape("bce_logits: target count mismatch"));
        }
        let total: f64 = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &t)| softplus(x) - t * x)
            .sum();
        let value = Tensor::scalar(total / targets.len() as f64);
        let g = self.grad_of(&[logits]);
        Ok(self.push(value, Op::BceLogits(logits, targets.to_vec()), g))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMulT(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, inner, out) = (xv.rows(), xv.cols(), wv.shape()[0]);
                if self.requires_grad(*x) {
                    let gx = slot(grads, *x, xv);
                    matmul_n(dy.data(), wv.data(), rows, out, inner, gx.data_mut(), true);
                }
                if self.requires_grad(*w) {
                    let gw = slot(grads, *w, wv);
                    matmul_tn(dy.data(), xv.data(), rows, out, inner, gw.data_mut(), true);
                }
            }
            Op::AddRow(x, b) | Op::MulRow(x, b) => {
                let mul = matches!(node.op, Op::MulRow(..));
                let (xv, bv) = (self.value(*x), self.value(*b));
                let c = xv.cols();
                if self.requires_grad(*x) {
                    let gx = slot(grads, *x, xv);
                    for (k, g) in gx.data_mut().iter_mut().enumerate() {
                        *g += if mul { dy.data()[k] * bv.data()[k % c] } else { dy.data()[k] };
                    }
                }
                if self.requires_grad(*b) {
                    let gb = slot(grads, *b, bv);
                    for (k, &d) in dy.data().iter().enumerate() {
                        gb.data_mut()[k % c] += if mul { d * xv.data()[k] } else { d };
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |_| dy.clone());
                self.acc(grads, *b, |_| dy.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |_| dy.clone());
                self.acc(grads, *b, |_| dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |_| dy.zip_map(bv, |d, v| d * v).unwrap());
                self.acc(grads, *b, |_| dy.zip_map(av, |d, v| d * v).unwrap());
            }
            Op::Scale(x, c) => self.acc(grads, *x, |_| dy.map(|d| d * c)),
            Op::AddScalar(x) | Op::Reshape(x) => self.acc(grads, *x, |xv| {
                Tensor::new(xv.shape().to_vec(), dy.data().to_vec()).unwrap()
            }),
            Op::Sigmoid(x) => self.acc(grads, *x, |_| dy.zip_map(y, |d, s| d * s * (1.0 - s)).unwrap()),
            Op::Tanh(x) => self.acc(grads, *x, |_| dy.zip_map(y, |d, t| d * (1.0 - t * t)).unwrap()),
            Op::Exp(x) => self.acc(grads, *x, |_| dy.zip_map(y, |d, e| d * e).unwrap()),
            Op::Relu(x) => self.acc(grads, *x, |xv| {
                dy.zip_map(xv, |d, v| if v > 0.0 { d } else { 0.0 }).unwrap()
            }),
            Op::LogAbs(x) => self.acc(grads, *x, |xv| dy.zip_map(xv, |d, v| d / v).unwrap()),
            Op::Square(x) => self.acc(grads, *x, |xv| dy.zip_map(xv, |d, v| 2.0 * d * v).unwrap()),
            Op::Clamp(x, lo, hi) => self.acc(grads, *x, |xv| {
                dy.zip_map(xv, |d, v| if v < *lo || v > *hi { 0.0 } else { d }).unwrap()
            }),
            Op::SliceCols(x, start) => {
                if self.requires_grad(*x) {
                    let xv = self.value(*x);
                    let (c, len) = (xv.cols(), dy.cols());
                    let gx = slot(grads, *x, xv);
                    for r in 0..dy.rows() {
                        let dst = &mut gx.data_mut()[r * c + start..r * c + start + len];
                        for (g, &d) in dst.iter_mut().zip(dy.row(r)) {
                            *g += d;
                        }
                    }
                }
            }
            Op::SliceRows(x, start) => {
                if self.requires_grad(*x) {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let gx = slot(grads, *x, xv);
                    let dst = &mut gx.data_mut()[start * c..start * c + dy.len()];
                    for (g, &d) in dst.iter_mut().zip(dy.data()) {
                        *g += d;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let total = dy.cols();
                for &p in parts {
                    let pv = self.value(p);
                    let pc = pv.cols();
                    if self.requires_grad(p) {
                        let gp = slot(grads, p, pv);
                        for r in 0..dy.rows() {
                            let src = &dy.data()[r * total + offset..r * total + offset + pc];
                            for (g, &d) in gp.data_mut()[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                *g += d;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let n = pv.len();
                    if self.requires_grad(p) {
                        let gp = slot(grads, p, pv);
                        for (g, &d) in gp.data_mut().iter_mut().zip(&dy.data()[offset..offset + n]) {
                            *g += d;
                        }
                    }
                    offset += n;
                }
            }
            Op::GatherCols(x, idx) => {
                if self.requires_grad(*x) {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let gx = slot(grads, *x, xv);
                    for r in 0..dy.rows() {
                        for (j, &src) in idx.iter().enumerate() {
                            gx.data_mut()[r * c + src] += dy.row(r)[j];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let d = dy.item();
                self.acc(grads, *x, |xv| Tensor::full(xv.shape(), d));
            }
            Op::SumCols(x) => self.acc(grads, *x, |xv| {
                let c = xv.cols();
                let data = (0..xv.len()).map(|k| dy.data()[k / c]).collect();
                Tensor::new(xv.shape().to_vec(), data).unwrap()
            }),
            Op::SoftmaxXent(logits, labels) => {
                let d = dy.item() / labels.len() as f64;
                self.acc(grads, *logits, |lv| {
                    let c = lv.cols();
                    let mut out = Tensor::zeros(lv.shape());
                    for (r, &l) in labels.iter().enumerate() {
                        let row = lv.row(r);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
                        for k in 0..c {
                            let p = (row[k] - m).exp() / z;
                            out.data_mut()[r * c + k] = d * (p - if k == l { 1.0 } else { 0.0 });
                        }
                    }
                    out
                });
            }
            Op::BceLogits(logits, targets) => {
                let d = dy.item() / targets.len() as f64;
                self.acc(grads, *logits, |lv| {
                    let data = lv
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&x, &t)| d * (sigmoid(x) - t))
                        .collect();
                    Tensor::new(lv.shape().to_vec(), data).unwrap()
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], x: Var, contribution: impl FnOnce(&Tensor) -> Tensor) {
        if !self.requires_grad(x) {
            return;
        }
        let c = contribution(self.value(x));
        match &mut grads[x.0] {
            Some(g) => g.axpy(1.0, &c),
            slot @ None => *slot = Some(c),
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![3.0, -2.0]));
        let b = g.param(Tensor::vector(vec![0.5, 4.0]));
        let p = g.mul(a, b).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.5, 4.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[3.0, -2.0]);
    }

    #[test]
    fn constants_and_detached_values_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![1.0, 2.0]));
        let d = g.detach(a);
        let c = g.constant(Tensor::vector(vec![1.0, 1.0]));
        let x = g.mul(d, c).unwrap();
        let s = g.sum(x);
        assert!(!g.requires_grad(s));
        let grads = g.backward(s).unwrap();
        assert!(grads.get(a).is_none());
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_xent_gradient_is_probability_minus_onehot() {
        let mut g = Graph::new();
        let l = g.param(Tensor::new(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap());
        let loss = g.softmax_xent(l, &[1]).unwrap();
        assert!((g.value(loss).item() - 3f64.ln()).abs() < 1e-12);
        let grads = g.backward(loss).unwrap();
        let d = grads.get(l).unwrap().data();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((d[1] + 2.0 / 3.0).abs() < 1e-12);
    }
}
