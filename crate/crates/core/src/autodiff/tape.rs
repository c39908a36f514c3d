use super::{Gradients, ParamId, ParamStore, Rng, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    AddRow(Var, Var),
    Concat(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Sum(Var),
    Row(Var, usize),
    Slice(Var, usize),
    StackRows(Vec<Var>),
    Gather(ParamId, Vec<usize>),
    SparseMatVec(ParamId, Vec<(usize, f64)>),
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Value,
}

/// Append-only record of a computation over a borrowed [`ParamStore`].
///
/// Node order is a topological order; [`backward_into`] walks it in reverse.
/// A tape belongs to one forward pass on one thread.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, left: &Tensor, right: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Constant, value, "constant")
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Value::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, out, name)
    }

    fn map(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.value(a);
        let out = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())?;
        self.push(op, out, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, factor), "scale", |x| x * factor)
    }

    pub fn add_scalar(&mut self, a: Var, shift: f64) -> Result<Var> {
        self.map(a, Op::AddScalar(a), "add_scalar", |x| x + shift)
    }

    /// `1 - a`, element-wise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), "tanh", f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    /// `(m×k)·(k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = match (ta.dims2(), tb.dims2()) {
            (Some(x), Some(y)) if x.1 == y.0 => (x, y),
            _ => return Err(shape_err("matmul", ta, tb)),
        };
        debug_assert_eq!(k, k2);
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                for (o, &y) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?, "matmul")
    }

    /// `(m×k)·(n×k)ᵀ`: applies a row-major `out×in` weight to every row of `a`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (n, _)) = match (ta.dims2(), tb.dims2()) {
            (Some(x), Some(y)) if x.1 == y.1 => (x, y),
            _ => return Err(shape_err("matmul_nt", ta, tb)),
        };
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let ra = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                out.push(dot(ra, &bd[j * k..(j + 1) * k]));
            }
        }
        self.push(Op::MatMulNT(a, b), Tensor::matrix(m, n, out)?, "matmul_nt")
    }

    /// `(m×k)·x` for a length-`k` vector.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (self.value(w), self.value(x));
        let (m, k) = match (tw.dims2(), tx.shape()) {
            (Some((m, k)), [len]) if *len == k => (m, k),
            _ => return Err(shape_err("matvec", tw, tx)),
        };
        let (wd, xd) = (tw.data(), tx.data());
        let out = (0..m).map(|i| dot(&wd[i * k..(i + 1) * k], xd)).collect();
        self.push(Op::MatVec(w, x), Tensor::vector(out), "matvec")
    }

    /// `xᵀ·(r×c)` for a length-`r` vector.
    pub fn vecmat(&mut self, x: Var, m: Var) -> Result<Var> {
        let (tx, tm) = (self.value(x), self.value(m));
        let (r, c) = match (tx.shape(), tm.dims2()) {
            ([len], Some((r, c))) if *len == r => (r, c),
            _ => return Err(shape_err("vecmat", tx, tm)),
        };
        let (xd, md) = (tx.data(), tm.data());
        let mut out = vec![0.0; c];
        for i in 0..r {
            axpy(xd[i], &md[i * c..(i + 1) * c], &mut out);
        }
        self.push(Op::VecMat(x, m), Tensor::vector(out), "vecmat")
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (tm, tv) = (self.value(m), self.value(v));
        let (r, c) = match (tm.dims2(), tv.shape()) {
            (Some((r, c)), [len]) if *len == c => (r, c),
            _ => return Err(shape_err("add_row", tm, tv)),
        };
        let vd = tv.data();
        let mut out = tm.data().to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(vd).for_each(|(o, &b)| *o += b);
        }
        self.push(Op::AddRow(m, v), Tensor::matrix(r, c, out)?, "add_row")
    }

    /// Concatenation along the last axis (vectors, or matrices with equal row counts).
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = match (ta.shape(), tb.shape()) {
            ([_], [_]) => {
                let mut d = ta.data().to_vec();
                d.extend_from_slice(tb.data());
                Tensor::vector(d)
            }
            ([ra, ca], [rb, cb]) if ra == rb => {
                let (ca, cb) = (*ca, *cb);
                let mut d = Vec::with_capacity(ra * (ca + cb));
                for i in 0..*ra {
                    d.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
                    d.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
                }
                Tensor::matrix(*ra, ca + cb, d)?
            }
            _ => return Err(shape_err("concat", ta, tb)),
        };
        self.push(Op::Concat(a, b), out, "concat")
    }

    /// Softmax of a vector, max-shifted.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 1 || ta.is_empty() {
            return Err(TensorError::Contract(format!(
                "softmax needs a non-empty vector, got shape {:?}",
                ta.shape()
            )));
        }
        let out = softmax(ta.data());
        self.push(Op::Softmax(a), Tensor::vector(out), "softmax")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), "sum")
    }

    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let tm = self.value(m);
        let Some((r, _)) = tm.dims2() else {
            return Err(TensorError::Contract(format!(
                "row needs a matrix, got shape {:?}",
                tm.shape()
            )));
        };
        if i >= r {
            return Err(TensorError::Index { index: i, len: r });
        }
        let out = Tensor::vector(tm.row(i).to_vec());
        self.push(Op::Row(m, i), out, "row")
    }

    /// `v[start..start + len]` of a vector.
    pub fn slice(&mut self, v: Var, start: usize, len: usize) -> Result<Var> {
        let tv = self.value(v);
        match tv.shape() {
            [n] if start + len <= *n => {}
            [n] => {
                return Err(TensorError::Index {
                    index: start + len,
                    len: *n,
                })
            }
            s => {
                return Err(TensorError::Contract(format!(
                    "slice needs a vector, got shape {s:?}"
                )))
            }
        }
        let out = Tensor::vector(tv.data()[start..start + len].to_vec());
        self.push(Op::Slice(v, start), out, "slice")
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(TensorError::Contract("stack_rows needs at least one row".into()));
        };
        let c = self.value(first).len();
        let mut d = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            let t = self.value(r);
            if t.shape() != [c] {
                return Err(shape_err("stack_rows", self.value(first), t));
            }
            d.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows.len(), c, d)?;
        self.push(Op::StackRows(rows.to_vec()), out, "stack_rows")
    }

    /// Selects rows of a stored `r×k` parameter; gradients scatter back into those rows only.
    pub fn gather_rows(&mut self, table: ParamId, ids: &[usize]) -> Result<Var> {
        let t = self.params.get(table);
        let Some((r, k)) = t.dims2() else {
            return Err(TensorError::Contract("gather_rows needs a matrix parameter".into()));
        };
        let mut d = Vec::with_capacity(ids.len() * k);
        for &i in ids {
            if i >= r {
                return Err(TensorError::Index { index: i, len: r });
            }
            d.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(ids.len(), k, d)?;
        self.push(Op::Gather(table, ids.to_vec()), out, "gather_rows")
    }

    /// `W·s` for a stored `m×dim` parameter and a sparse vector given as
    /// strictly increasing `(index, value)` entries. Only the touched columns
    /// of `W` are read or receive gradient.
    pub fn sparse_matvec(&mut self, w: ParamId, dim: usize, entries: &[(usize, f64)]) -> Result<Var> {
        let t = self.params.get(w);
        let (m, cols) = match t.dims2() {
            Some((m, c)) if c == dim => (m, c),
            _ => {
                return Err(TensorError::Shape {
                    op: "sparse_matvec",
                    left: t.shape().to_vec(),
                    right: vec![dim],
                })
            }
        };
        if let Some(&(j, _)) = entries.iter().find(|(j, _)| *j >= cols) {
            return Err(TensorError::Index { index: j, len: cols });
        }
        let wd = t.data();
        let out = (0..m)
            .map(|i| entries.iter().map(|&(j, v)| wd[i * cols + j] * v).sum())
            .collect();
        self.push(
            Op::SparseMatVec(w, entries.to_vec()),
            Tensor::vector(out),
            "sparse_matvec",
        )
    }

    /// Scalar cross-entropy `-ln softmax(logits)[label]`; also returns the probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<(Var, Vec<f64>)> {
        let (loss, probs) = softmax_cross_entropy(self.value(logits).data(), label)?;
        let v = self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs: probs.clone(),
            },
            Tensor::scalar(loss),
            "softmax_cross_entropy",
        )?;
        Ok((v, probs))
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`; the
    /// mask consumes one draw per element from `rng` otherwise.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Contract(format!("dropout p must be in [0,1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let shape = self.value(x).shape().to_vec();
        let n = self.value(x).len();
        let mask = (0..n)
            .map(|_| if rng.next_f64() < p { 0.0 } else { keep })
            .collect();
        let mask = self.constant(Tensor::new(shape, mask)?)?;
        self.mul(x, mask)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Eight independent partial sums, so the loop vectorizes; the summation
/// order is fixed and results are reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    lanes.iter().sum::<f64>() + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(o, &v)| *o += alpha * v);
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `logits` against `label`, with the softmax probabilities.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(TensorError::Contract(format!(
            "cross-entropy needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(TensorError::Index {
            index: label,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    let probs = softmax(logits);
    let loss = -(logits[label] - max - log_total);
    Ok((loss, probs))
}

/// Gradients of scalar `loss` with respect to every parameter of the tape's
/// store. Parameters the loss does not reach get zeros.
pub fn backward(tape: &Tape<'_>, loss: Var) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(tape.params);
    backward_into(tape, loss, &mut grads, 1.0)?;
    Ok(grads)
}

fn acc(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Adds `seed · ∂loss/∂θ` into `grads` for every parameter `θ`.
pub fn backward_into(tape: &Tape<'_>, loss: Var, grads: &mut Gradients, seed: f64) -> Result<()> {
    let lt = tape.value(loss);
    if !lt.is_scalar() {
        return Err(TensorError::Contract(format!(
            "backward needs a scalar loss, got shape {:?}",
            lt.shape()
        )));
    }
    if grads.len() != tape.params.len() {
        return Err(TensorError::Contract("gradient buffer does not match parameter store".into()));
    }
    let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
    adj[loss.0] = Some(vec![seed]);

    for i in (0..=loss.0).rev() {
        let Some(g) = adj[i].take() else { continue };
        let node = &tape.nodes[i];
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                axpy(1.0, &g, grads.get_mut(*id).data_mut());
            }
            Op::Add(a, b) => {
                axpy(1.0, &g, acc(&mut adj, *a, g.len()));
                axpy(1.0, &g, acc(&mut adj, *b, g.len()));
            }
            Op::Sub(a, b) => {
                axpy(1.0, &g, acc(&mut adj, *a, g.len()));
                axpy(-1.0, &g, acc(&mut adj, *b, g.len()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (tape.value(*a).data(), tape.value(*b).data());
                for (o, (gi, bi)) in acc(&mut adj, *a, g.len()).iter_mut().zip(g.iter().zip(vb)) {
                    *o += gi * bi;
                }
                for (o, (gi, ai)) in acc(&mut adj, *b, g.len()).iter_mut().zip(g.iter().zip(va)) {
                    *o += gi * ai;
                }
            }
            Op::Scale(a, f) => axpy(*f, &g, acc(&mut adj, *a, g.len())),
            Op::AddScalar(a) => axpy(1.0, &g, acc(&mut adj, *a, g.len())),
            Op::Tanh(a) => {
                let y = tape.value(Var(i)).data();
                for (o, (gi, yi)) in acc(&mut adj, *a, g.len()).iter_mut().zip(g.iter().zip(y)) {
                    *o += gi * (1.0 - yi * yi);
                }
            }
            Op::Sigmoid(a) => {
                let y = tape.value(Var(i)).data();
                for (o, (gi, yi)) in acc(&mut adj, *a, g.len()).iter_mut().zip(g.iter().zip(y)) {
                    *o += gi * yi * (1.0 - yi);
                }
            }
            Op::Softmax(a) => {
                let y = tape.value(Var(i)).data();
                let d = dot(&g, y);
                for (o, (gi, yi)) in acc(&mut adj, *a, g.len()).iter_mut().zip(g.iter().zip(y)) {
                    *o += yi * (gi - d);
                }
            }
            Op::Sum(a) => {
                let n = tape.value(*a).len();
                acc(&mut adj, *a, n).iter_mut().for_each(|o| *o += g[0]);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (tape.value(*a), tape.value(*b));
                let ((m, k), (_, n)) = (ta.dims2().unwrap(), tb.dims2().unwrap());
                let (ad, bd) = (ta.data(), tb.data());
                {
                    let da = acc(&mut adj, *a, m * k);
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            da[r * k + p] += dot(gr, &bd[p * n..(p + 1) * n]);
                        }
                    }
                }
                let db = acc(&mut adj, *b, k * n);
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        axpy(ad[r * k + p], gr, &mut db[p * n..(p + 1) * n]);
                    }
                }
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (tape.value(*a), tape.value(*b));
                let ((m, k), (n, _)) = (ta.dims2().unwrap(), tb.dims2().unwrap());
                let (ad, bd) = (ta.data(), tb.data());
                {
                    let da = acc(&mut adj, *a, m * k);
                    for r in 0..m {
                        for j in 0..n {
                            axpy(g[r * n + j], &bd[j * k..(j + 1) * k], &mut da[r * k..(r + 1) * k]);
                        }
                    }
                }
                let db = acc(&mut adj, *b, n * k);
                for r in 0..m {
                    for j in 0..n {
                        axpy(g[r * n + j], &ad[r * k..(r + 1) * k], &mut db[j * k..(j + 1) * k]);
                    }
                }
            }
            Op::MatVec(w, x) => {
                let (tw, tx) = (tape.value(*w), tape.value(*x));
                let (m, k) = tw.dims2().unwrap();
                let (wd, xd) = (tw.data(), tx.data());
                {
                    let dw = acc(&mut adj, *w, m * k);
                    for r in 0..m {
                        axpy(g[r], xd, &mut dw[r * k..(r + 1) * k]);
                    }
                }
                let dx = acc(&mut adj, *x, k);
                for r in 0..m {
                    axpy(g[r], &wd[r * k..(r + 1) * k], dx);
                }
            }
            Op::VecMat(x, mt) => {
                let (tx, tm) = (tape.value(*x), tape.value(*mt));
                let (r, c) = tm.dims2().unwrap();
                let (xd, md) = (tx.data(), tm.data());
                {
                    let dx = acc(&mut adj, *x, r);
                    for (q, o) in dx.iter_mut().enumerate() {
                        *o += dot(&md[q * c..(q + 1) * c], &g);
                    }
                }
                let dm = acc(&mut adj, *mt, r * c);
                for q in 0..r {
                    axpy(xd[q], &g, &mut dm[q * c..(q + 1) * c]);
                }
            }
            Op::AddRow(m, v) => {
                let c = tape.value(*v).len();
                axpy(1.0, &g, acc(&mut adj, *m, g.len()));
                let dv = acc(&mut adj, *v, c);
                for row in g.chunks(c) {
                    axpy(1.0, row, dv);
                }
            }
            Op::Concat(a, b) => {
                let (ta, tb) = (tape.value(*a), tape.value(*b));
                match (ta.dims2(), tb.dims2()) {
                    (Some((r, ca)), Some((_, cb))) => {
                        let w = ca + cb;
                        {
                            let da = acc(&mut adj, *a, r * ca);
                            for q in 0..r {
                                axpy(1.0, &g[q * w..q * w + ca], &mut da[q * ca..(q + 1) * ca]);
                            }
                        }
                        let db = acc(&mut adj, *b, r * cb);
                        for q in 0..r {
                            axpy(1.0, &g[q * w + ca..(q + 1) * w], &mut db[q * cb..(q + 1) * cb]);
                        }
                    }
                    _ => {
                        let la = ta.len();
                        axpy(1.0, &g[..la], acc(&mut adj, *a, la));
                        axpy(1.0, &g[la..], acc(&mut adj, *b, g.len() - la));
                    }
                }
            }
            Op::Row(m, r) => {
                let tm = tape.value(*m);
                let c = g.len();
                let dm = acc(&mut adj, *m, tm.len());
                axpy(1.0, &g, &mut dm[r * c..(r + 1) * c]);
            }
            Op::Slice(v, start) => {
                let n = tape.value(*v).len();
                let dv = acc(&mut adj, *v, n);
                axpy(1.0, &g, &mut dv[*start..start + g.len()]);
            }
            Op::StackRows(rows) => {
                let c = g.len() / rows.len();
                for (q, r) in rows.iter().enumerate() {
                    axpy(1.0, &g[q * c..(q + 1) * c], acc(&mut adj, *r, c));
                }
            }
            Op::Gather(table, ids) => {
                let dt = grads.get_mut(*table);
                let k = dt.dims2().unwrap().1;
                let d = dt.data_mut();
                for (q, &row) in ids.iter().enumerate() {
                    axpy(1.0, &g[q * k..(q + 1) * k], &mut d[row * k..(row + 1) * k]);
                }
            }
            Op::SparseMatVec(w, entries) => {
                let dw = grads.get_mut(*w);
                let cols = dw.dims2().unwrap().1;
                let d = dw.data_mut();
                for (r, &gr) in g.iter().enumerate() {
                    for &(j, v) in entries {
                        d[r * cols + j] += gr * v;
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => {
                let dl = acc(&mut adj, *logits, probs.len());
                for (q, (o, p)) in dl.iter_mut().zip(probs).enumerate() {
                    let target = if q == *label { 1.0 } else { 0.0 };
                    *o += g[0] * (p - target);
                }
            }
        }
    }
    Ok(())
}
