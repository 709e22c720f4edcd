//! Tape-based reverse-mode differentiation.
//!
//! Operations append nodes to a [`Tape`] as they are evaluated, so node
//! order is a topological order by construction. [`Tape::backward`] walks
//! the nodes in reverse and accumulates vector-Jacobian products.
//!
//! Values are matrices in practice: a 1-d tensor of length `n` acts as a
//! single row `[1, n]`.

use super::tensor::{gemm, log_softmax_at, sigmoid, softmax_in_place, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Sigmoid(Var),
    Tanh(Var),
    NarrowCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    GatherRows { table: Var, ids: Vec<usize> },
    Blend { new: Var, old: Var, keep_new: Vec<bool> },
    NormalizeRows { x: Var, norms: Vec<f64> },
    RowDot { q: Var, keys: Var },
    SoftmaxRows(Var),
    WeightedRows { weights: Var, values: Var },
    InterleaveRows(Vec<Var>),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>> },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; nodes the loss does not depend on get zeros.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn grad_slot<'g>(grads: &'g mut [Option<Tensor>], nodes: &[Node], v: Var) -> &'g mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()))
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = rows_cols(av);
        let (k2, n) = rows_cols(bv);
        if k != k2 {
            return Err(Error::dim("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(false, false, m, k, n, av.data(), bv.data(), &mut out, 0.0);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// `x[r, :] + bias` for every row `r`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let cols = xv.cols();
        if bv.len() != cols {
            return Err(Error::dim("add_bias", xv.shape(), bv.shape()));
        }
        let mut value = xv.clone();
        for row in value.data_mut().chunks_mut(cols) {
            for (v, b) in row.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddBias(x, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("mul", a, b)?;
        let bv = self.value(b).data().to_vec();
        let mut value = self.value(a).clone();
        for (v, y) in value.data_mut().iter_mut().zip(bv) {
            *v *= y;
        }
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x, factor))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if factors.len() != xv.len() {
            return Err(Error::dim("mul_const", xv.shape(), &[factors.len()]));
        }
        let mut value = xv.clone();
        for (v, f) in value.data_mut().iter_mut().zip(&factors) {
            *v *= f;
        }
        Ok(self.push(value, Op::MulConst(x, factors)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn narrow_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = rows_cols(xv);
        if len == 0 || start + len > cols {
            return Err(Error::dim("narrow_cols", xv.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let value = Tensor::new(vec![rows, len], out)?;
        Ok(self.push(value, Op::NarrowCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(Error::Contract("concat of zero tensors".into())),
        };
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::dim("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `ids` of `table`, in order (embedding lookup, key selection).
    pub fn gather_rows(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        let tv = self.value(table);
        let (rows, cols) = rows_cols(tv);
        if ids.is_empty() {
            return Err(Error::Contract("gather of zero rows".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::dim("gather_rows", tv.shape(), &[bad]));
        }
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in &ids {
            out.extend_from_slice(tv.row(i));
        }
        let value = Tensor::new(vec![ids.len(), cols], out)?;
        Ok(self.push(value, Op::GatherRows { table, ids }))
    }

    /// Row `r` comes from `new` when `keep_new[r]`, else from `old`.
    /// Used to freeze recurrent state on padded time steps.
    pub fn blend_rows(&mut self, new: Var, old: Var, keep_new: Vec<bool>) -> Result<Var> {
        self.same_len("blend_rows", new, old)?;
        let nv = self.value(new);
        if keep_new.len() != nv.rows() {
            return Err(Error::dim("blend_rows", nv.shape(), &[keep_new.len()]));
        }
        let mut value = nv.clone();
        let ov = self.value(old);
        for (r, &keep) in keep_new.iter().enumerate() {
            if !keep {
                value.row_mut(r).copy_from_slice(ov.row(r));
            }
        }
        Ok(self.push(value, Op::Blend { new, old, keep_new }))
    }

    /// Scales every row to unit Euclidean norm. A row that is exactly zero
    /// is mapped to the constant direction `1/sqrt(d)` and passes no
    /// gradient.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let cols = value.cols();
        let mut norms = Vec::with_capacity(value.rows());
        for row in value.data_mut().chunks_mut(cols) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            } else {
                let u = 1.0 / (cols as f64).sqrt();
                row.iter_mut().for_each(|v| *v = u);
            }
            norms.push(n);
        }
        self.push(value, Op::NormalizeRows { x, norms })
    }

    /// `out[b, j] = q[b] . keys[b * per_row + j]` where `keys` stacks
    /// `per_row` candidate rows for every query row.
    pub fn row_dot(&mut self, q: Var, keys: Var) -> Result<Var> {
        let (qv, kv) = (self.value(q), self.value(keys));
        let (b, d) = rows_cols(qv);
        let (kr, kd) = rows_cols(kv);
        if kd != d || kr % b != 0 {
            return Err(Error::dim("row_dot", qv.shape(), kv.shape()));
        }
        let per_row = kr / b;
        let mut out = Vec::with_capacity(kr);
        for r in 0..b {
            let qr = qv.row(r);
            for j in 0..per_row {
                out.push(super::tensor::dot(qr, kv.row(r * per_row + j)));
            }
        }
        let value = Tensor::new(vec![b, per_row], out)?;
        Ok(self.push(value, Op::RowDot { q, keys }))
    }

    /// Softmax of every row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let cols = value.cols();
        for row in value.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
        self.push(value, Op::SoftmaxRows(x))
    }

    /// Softmax of every row where row `r` only ranges over its first
    /// `lengths[r]` entries; the rest get probability zero.
    pub fn masked_softmax_rows(&mut self, x: Var, lengths: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if lengths.len() != xv.rows() || lengths.iter().any(|&l| l == 0 || l > cols) {
            return Err(Error::dim("masked_softmax_rows", xv.shape(), lengths));
        }
        let mut masked = xv.clone();
        for (row, &len) in masked.data_mut().chunks_mut(cols).zip(lengths) {
            row[len..].iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        }
        // Masked entries end with probability zero and hence zero gradient,
        // so an identity link back to `x` is exact.
        let masked = self.push(masked, Op::Scale(x, 1.0));
        Ok(self.softmax_rows(masked))
    }

    /// `out[b] = sum_j w[b, j] * values[b * per_row + j]`.
    pub fn weighted_rows(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (wv, vv) = (self.value(weights), self.value(values));
        let (b, per_row) = rows_cols(wv);
        let (vr, d) = rows_cols(vv);
        if vr != b * per_row {
            return Err(Error::dim("weighted_rows", wv.shape(), vv.shape()));
        }
        let mut out = vec![0.0; b * d];
        for r in 0..b {
            let acc = &mut out[r * d..(r + 1) * d];
            for j in 0..per_row {
                let w = wv.data()[r * per_row + j];
                if w == 0.0 {
                    continue;
                }
                for (a, v) in acc.iter_mut().zip(vv.row(r * per_row + j)) {
                    *a += w * v;
                }
            }
        }
        let value = Tensor::new(vec![b, d], out)?;
        Ok(self.push(value, Op::WeightedRows { weights, values }))
    }

    /// Interleaves `T` matrices of shape `[B, d]` into `[B * T, d]` with
    /// row `b * T + t` taken from `parts[t]`.
    pub fn interleave_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = match parts.first() {
            Some(&p) => p,
            None => return Err(Error::Contract("interleave of zero tensors".into())),
        };
        let (b, d) = rows_cols(self.value(first));
        for &p in parts {
            if rows_cols(self.value(p)) != (b, d) {
                return Err(Error::dim("interleave_rows", self.shape(first), self.shape(p)));
            }
        }
        let mut out = Vec::with_capacity(b * parts.len() * d);
        for r in 0..b {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![b * parts.len(), d], out)?;
        Ok(self.push(value, Op::InterleaveRows(parts.to_vec())))
    }

    /// Summed negative log-likelihood of `targets` under the row-wise
    /// softmax of `logits`. Rows whose target is `None` are skipped.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, cols) = rows_cols(lv);
        if targets.len() != rows {
            return Err(Error::dim("cross_entropy", lv.shape(), &[targets.len()]));
        }
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= cols {
                    return Err(Error::Data(format!(
                        "target id {t} outside output vocabulary of size {cols}"
                    )));
                }
                total -= log_softmax_at(lv.row(r), t);
            }
        }
        Ok(self.push(Tensor::scalar(total), Op::CrossEntropy { logits, targets }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        macro_rules! grad_of {
            ($v:expr) => {
                grad_slot(grads, &self.nodes, $v)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = rows_cols(av);
                let n = bv.cols();
                let ga = grad_of!(*a);
                gemm(false, true, m, n, k, g.data(), bv.data(), ga.data_mut(), 1.0);
                let gb = grad_of!(*b);
                gemm(true, false, k, m, n, av.data(), g.data(), gb.data_mut(), 1.0);
            }
            Op::Add(a, b) => {
                grad_of!(*a).add_assign(g);
                grad_of!(*b).add_assign(g);
            }
            Op::AddBias(x, bias) => {
                grad_of!(*x).add_assign(g);
                let gb = grad_of!(*bias);
                let cols = gb.len();
                for row in g.data().chunks(cols) {
                    for (a, v) in gb.data_mut().iter_mut().zip(row) {
                        *a += v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga = grad_of!(*a);
                for ((o, gv), y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv) {
                    *o += gv * y;
                }
                let gb = grad_of!(*b);
                for ((o, gv), x) in gb.data_mut().iter_mut().zip(g.data()).zip(av) {
                    *o += gv * x;
                }
            }
            Op::Scale(x, f) => {
                let gx = grad_of!(*x);
                for (o, gv) in gx.data_mut().iter_mut().zip(g.data()) {
                    *o += gv * f;
                }
            }
            Op::MulConst(x, factors) => {
                let gx = grad_of!(*x);
                for ((o, gv), f) in gx.data_mut().iter_mut().zip(g.data()).zip(factors) {
                    *o += gv * f;
                }
            }
            Op::Sigmoid(x) => {
                let gx = grad_of!(*x);
                for ((o, gv), y) in gx.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    *o += gv * y * (1.0 - y);
                }
            }
            Op::Tanh(x) => {
                let gx = grad_of!(*x);
                for ((o, gv), y) in gx.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    *o += gv * (1.0 - y * y);
                }
            }
            Op::NarrowCols { x, start } => {
                let len = out.cols();
                let gx = grad_of!(*x);
                for r in 0..out.rows() {
                    let dst = &mut gx.row_mut(r)[*start..start + len];
                    for (o, gv) in dst.iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let gp = grad_of!(p);
                    for r in 0..out.rows() {
                        for (o, gv) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                            *o += gv;
                        }
                    }
                    offset += w;
                }
            }
            Op::GatherRows { table, ids } => {
                let gt = grad_of!(*table);
                for (r, &id) in ids.iter().enumerate() {
                    for (o, gv) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
            }
            Op::Blend { new, old, keep_new } => {
                for (r, &keep) in keep_new.iter().enumerate() {
                    let target = if keep { *new } else { *old };
                    let gt = grad_of!(target);
                    for (o, gv) in gt.row_mut(r).iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
            }
            Op::NormalizeRows { x, norms } => {
                let gx = grad_of!(*x);
                for (r, &n) in norms.iter().enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    let y = out.row(r);
                    let gr = g.row(r);
                    let proj = super::tensor::dot(y, gr);
                    for ((o, gv), yv) in gx.row_mut(r).iter_mut().zip(gr).zip(y) {
                        *o += (gv - yv * proj) / n;
                    }
                }
            }
            Op::RowDot { q, keys } => {
                let (qv, kv) = (self.value(*q), self.value(*keys));
                let per_row = out.cols();
                let gq = grad_of!(*q);
                for r in 0..out.rows() {
                    for j in 0..per_row {
                        let w = g.data()[r * per_row + j];
                        for (o, k) in gq.row_mut(r).iter_mut().zip(kv.row(r * per_row + j)) {
                            *o += w * k;
                        }
                    }
                }
                let gk = grad_of!(*keys);
                for r in 0..out.rows() {
                    for j in 0..per_row {
                        let w = g.data()[r * per_row + j];
                        for (o, qq) in gk.row_mut(r * per_row + j).iter_mut().zip(qv.row(r)) {
                            *o += w * qq;
                        }
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let gx = grad_of!(*x);
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let inner = super::tensor::dot(y, gr);
                    for ((o, gv), yv) in gx.row_mut(r).iter_mut().zip(gr).zip(y) {
                        *o += yv * (gv - inner);
                    }
                }
            }
            Op::WeightedRows { weights, values } => {
                let (wv, vv) = (self.value(*weights), self.value(*values));
                let per_row = wv.cols();
                let gw = grad_of!(*weights);
                for r in 0..out.rows() {
                    for j in 0..per_row {
                        gw.data_mut()[r * per_row + j] +=
                            super::tensor::dot(g.row(r), vv.row(r * per_row + j));
                    }
                }
                let gv = grad_of!(*values);
                for r in 0..out.rows() {
                    for j in 0..per_row {
                        let w = wv.data()[r * per_row + j];
                        for (o, gg) in gv.row_mut(r * per_row + j).iter_mut().zip(g.row(r)) {
                            *o += w * gg;
                        }
                    }
                }
            }
            Op::InterleaveRows(parts) => {
                let t = parts.len();
                for (ti, &p) in parts.iter().enumerate() {
                    let gp = grad_of!(p);
                    for b in 0..gp.rows() {
                        for (o, gv) in gp.row_mut(b).iter_mut().zip(g.row(b * t + ti)) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let scale = g.item();
                let gl = grad_of!(*logits);
                let mut probs = vec![0.0; lv.cols()];
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    probs.copy_from_slice(lv.row(r));
                    softmax_in_place(&mut probs);
                    probs[t] -= 1.0;
                    for (o, p) in gl.row_mut(r).iter_mut().zip(&probs) {
                        *o += scale * p;
                    }
                }
            }
            Op::Sum(x) => {
                let s = g.item();
                let gx = grad_of!(*x);
                gx.data_mut().iter_mut().for_each(|o| *o += s);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.leaf(Tensor::scalar(3.0));
        let xy = tape.mul(x, y).unwrap();
        let loss = tape.sum(xy);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).item(), 3.0);
        assert_eq!(g.get(y).item(), 2.0);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::vector(vec![0.3, -1.2, 2.0, 0.0]));
        let p = tape.softmax_rows(z);
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(z).data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(z), Err(Error::Contract(_))));
    }

    #[test]
    fn unreferenced_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let unused = tape.leaf(Tensor::zeros(&[2, 3]));
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(unused), Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).item(), 6.0);
    }

    #[test]
    fn masked_softmax_ignores_tail() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![0.0, 0.0, 9.0], vec![1.0, 2.0, 3.0]]).unwrap());
        let p = tape.masked_softmax_rows(x, &[2, 3]).unwrap();
        let v = tape.value(p);
        assert_eq!(&v.row(0)[..], &[0.5, 0.5, 0.0]);
        assert!((v.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 3]));
        assert!(matches!(
            tape.cross_entropy(x, vec![Some(3)]),
            Err(Error::Data(_))
        ));
    }
}
