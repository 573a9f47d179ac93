//! The recording tape: eager forward evaluation with reverse-mode backward.

use std::sync::Arc;

use super::linalg::gemm;
use super::{DiffError, Tensor};

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Value, Value),
    AddBias(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    Div(Value, Value),
    OneMinus(Value),
    Scale(Value, f64),
    MatMul(Value, Value),
    /// a @ b^T with b stored untransposed.
    MatMulBt(Value, Value),
    ConcatCols(Vec<Value>),
    ConcatRows(Vec<Value>),
    Reshape(Value),
    SumAll(Value),
    SumRows(Value),
    RowMul(Value, Value),
    Sigmoid(Value),
    Tanh(Value),
    Relu(Value),
    Exp(Value),
    Ln(Value),
    SoftmaxRows(Value),
    IndexRows(Value, Arc<Vec<usize>>),
    ScatterAddRows(Value, Arc<Vec<usize>>),
    /// Per-lane matrix-vector product: flat [L, d*d] matrices times [L, d]
    /// source rows.
    BmmVec(Value, Value, usize),
    TileRows(Value),
    PickPerRow(Value, Arc<Vec<usize>>),
    SliceRows(Value, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by tape handle.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Value) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Value) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

const LN_FLOOR: f64 = 1e-300;

/// A single-owner tape of recorded operations.
///
/// Operations evaluate eagerly and record backward metadata when any input
/// needs gradients; `backward` walks the records once in reverse. Evaluation
/// order is fixed by construction, so identical inputs give bit-identical
/// values and gradients.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Value {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Value(self.nodes.len() - 1)
    }

    fn needs(&self, v: Value) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Inserts a tensor as a differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Value {
        self.push(value, Op::Leaf, true)
    }

    /// Inserts a tensor that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Value {
        self.push(value, Op::Leaf, false)
    }

    fn shape_err(&self, op: &'static str, a: Value, b: Value) -> DiffError {
        DiffError::ShapeMismatch {
            op,
            a: self.value(a).shape().to_vec(),
            b: self.value(b).shape().to_vec(),
        }
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value, DiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("add", a, b));
        }
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, Op::Add(a, b), needs))
    }

    /// Adds a rank-1 bias to every row of a rank-2 tensor.
    pub fn add_bias(&mut self, a: Value, bias: Value) -> Result<Value, DiffError> {
        let (r, c) = (self.value(a).rows(), self.value(a).cols());
        if self.value(bias).len() != c {
            return Err(self.shape_err("add_bias", a, bias));
        }
        let mut out = self.value(a).clone();
        {
            let b = self.value(bias).data().to_vec();
            let data = out.data_mut();
            for i in 0..r {
                for j in 0..c {
                    data[i * c + j] += b[j];
                }
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(out, Op::AddBias(a, bias), needs))
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value, DiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("sub", a, b));
        }
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value, DiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("mul", a, b));
        }
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, Op::Mul(a, b), needs))
    }

    pub fn div(&mut self, a: Value, b: Value) -> Result<Value, DiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("div", a, b));
        }
        let data = zip_map(self.value(a), self.value(b), |x, y| x / y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, Op::Div(a, b), needs))
    }

    pub fn one_minus(&mut self, a: Value) -> Value {
        let data = map(self.value(a), |x| 1.0 - x);
        let needs = self.needs(a);
        self.push(data, Op::OneMinus(a), needs)
    }

    pub fn scale(&mut self, a: Value, k: f64) -> Value {
        let data = map(self.value(a), |x| k * x);
        let needs = self.needs(a);
        self.push(data, Op::Scale(a, k), needs)
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value, DiffError> {
        let (m, ka) = dims2(self.value(a));
        let (kb, n) = dims2(self.value(b));
        if ka != kb {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = Tensor::zeros(vec![m, n]);
        gemm(
            false,
            false,
            m,
            ka,
            n,
            1.0,
            self.value(a).data(),
            self.value(b).data(),
            0.0,
            out.data_mut(),
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), needs))
    }

    /// `a @ b^T` where `b` is stored untransposed `[n, k]`.
    pub fn matmul_bt(&mut self, a: Value, b: Value) -> Result<Value, DiffError> {
        let (m, ka) = dims2(self.value(a));
        let (n, kb) = dims2(self.value(b));
        if ka != kb {
            return Err(self.shape_err("matmul_bt", a, b));
        }
        let mut out = Tensor::zeros(vec![m, n]);
        gemm(
            false,
            true,
            m,
            ka,
            n,
            1.0,
            self.value(a).data(),
            self.value(b).data(),
            0.0,
            out.data_mut(),
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMulBt(a, b), needs))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Value]) -> Result<Value, DiffError> {
        assert!(!parts.is_empty());
        let r = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            if self.value(p).rows() != r {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
            total += self.value(p).cols();
        }
        let mut out = Tensor::zeros(vec![r, total]);
        {
            let data = out.data_mut();
            let mut off = 0usize;
            for &p in parts {
                let t = self.value(p);
                let c = t.cols();
                for i in 0..r {
                    data[i * total + off..i * total + off + c]
                        .copy_from_slice(&t.data()[i * c..(i + 1) * c]);
                }
                off += c;
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Stacks rank-2 tensors with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Value]) -> Result<Value, DiffError> {
        assert!(!parts.is_empty());
        let c = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            if self.value(p).cols() != c {
                return Err(self.shape_err("concat_rows", parts[0], p));
            }
            rows += self.value(p).rows();
        }
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::matrix(rows, c, data),
            Op::ConcatRows(parts.to_vec()),
            needs,
        ))
    }

    pub fn reshape(&mut self, a: Value, shape: Vec<usize>) -> Result<Value, DiffError> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(DiffError::ShapeMismatch {
                op: "reshape",
                a: self.value(a).shape().to_vec(),
                b: shape,
            });
        }
        let out = Tensor::new(shape, self.value(a).data().to_vec());
        let needs = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), needs))
    }

    pub fn sum_all(&mut self, a: Value) -> Value {
        let s: f64 = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), needs)
    }

    /// Column sums of a rank-2 tensor: `[R, C] -> [C]`.
    pub fn sum_rows(&mut self, a: Value) -> Value {
        let (r, c) = dims2(self.value(a));
        let mut out = vec![0.0; c];
        let data = self.value(a).data();
        for i in 0..r {
            for j in 0..c {
                out[j] += data[i * c + j];
            }
        }
        let needs = self.needs(a);
        self.push(Tensor::vector(out), Op::SumRows(a), needs)
    }

    /// Scales each row of `[R, C]` by the matching scalar of `[R, 1]`.
    pub fn row_mul(&mut self, a: Value, s: Value) -> Result<Value, DiffError> {
        let (r, c) = dims2(self.value(a));
        if self.value(s).rows() != r || self.value(s).cols() != 1 {
            return Err(self.shape_err("row_mul", a, s));
        }
        let mut out = self.value(a).clone();
        {
            let sv = self.value(s).data().to_vec();
            let data = out.data_mut();
            for i in 0..r {
                for j in 0..c {
                    data[i * c + j] *= sv[i];
                }
            }
        }
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(out, Op::RowMul(a, s), needs))
    }

    pub fn sigmoid(&mut self, a: Value) -> Value {
        let data = map(self.value(a), |x| 1.0 / (1.0 + (-x).exp()));
        let needs = self.needs(a);
        self.push(data, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Value) -> Value {
        let data = map(self.value(a), f64::tanh);
        let needs = self.needs(a);
        self.push(data, Op::Tanh(a), needs)
    }

    pub fn relu(&mut self, a: Value) -> Value {
        let data = map(self.value(a), |x| x.max(0.0));
        let needs = self.needs(a);
        self.push(data, Op::Relu(a), needs)
    }

    pub fn exp(&mut self, a: Value) -> Value {
        let data = map(self.value(a), f64::exp);
        let needs = self.needs(a);
        self.push(data, Op::Exp(a), needs)
    }

    /// Natural log, with the argument floored away from zero.
    pub fn ln(&mut self, a: Value) -> Value {
        let data = map(self.value(a), |x| x.max(LN_FLOOR).ln());
        let needs = self.needs(a);
        self.push(data, Op::Ln(a), needs)
    }

    /// Row-wise softmax, stabilized by max subtraction. Rows sum to one.
    pub fn softmax_rows(&mut self, a: Value) -> Value {
        let (r, c) = dims2(self.value(a));
        let mut out = Tensor::zeros(vec![r, c]);
        {
            let src = self.value(a).data();
            let dst = out.data_mut();
            for i in 0..r {
                let row = &src[i * c..(i + 1) * c];
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..c {
                    let e = (row[j] - m).exp();
                    dst[i * c + j] = e;
                    sum += e;
                }
                for j in 0..c {
                    dst[i * c + j] /= sum;
                }
            }
        }
        let needs = self.needs(a);
        self.push(out, Op::SoftmaxRows(a), needs)
    }

    /// Gathers rows of a rank-2 tensor: row `i` of the result is row
    /// `idx[i]` of `a`. Also serves as embedding lookup.
    pub fn index_rows(&mut self, a: Value, idx: Arc<Vec<usize>>) -> Result<Value, DiffError> {
        let (r, c) = dims2(self.value(a));
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= r {
                return Err(DiffError::IndexOutOfRange { index: i, len: r });
            }
            data.extend_from_slice(&self.value(a).data()[i * c..(i + 1) * c]);
        }
        let out = Tensor::matrix(idx.len(), c, data);
        let needs = self.needs(a);
        Ok(self.push(out, Op::IndexRows(a, idx), needs))
    }

    /// Scatter-adds rows of `a` into a zero tensor of `rows` rows: row
    /// `idx[i]` of the result accumulates row `i` of `a`.
    pub fn scatter_add_rows(
        &mut self,
        a: Value,
        idx: Arc<Vec<usize>>,
        rows: usize,
    ) -> Result<Value, DiffError> {
        let (r, c) = dims2(self.value(a));
        assert_eq!(idx.len(), r, "one target per row");
        let mut out = Tensor::zeros(vec![rows, c]);
        {
            let src = self.value(a).data();
            let dst = out.data_mut();
            for (i, &t) in idx.iter().enumerate() {
                if t >= rows {
                    return Err(DiffError::IndexOutOfRange {
                        index: t,
                        len: rows,
                    });
                }
                for j in 0..c {
                    dst[t * c + j] += src[i * c + j];
                }
            }
        }
        let needs = self.needs(a);
        Ok(self.push(out, Op::ScatterAddRows(a, idx), needs))
    }

    /// Applies a per-lane `d x d` matrix (stored flat as a row of `m`) to the
    /// matching row of `h`: `out[l, r] = sum_c m[l, r*d+c] * h[l, c]`.
    pub fn bmm_vec(&mut self, m: Value, h: Value, d: usize) -> Result<Value, DiffError> {
        let (lm, dd) = dims2(self.value(m));
        let (lh, dh) = dims2(self.value(h));
        if lm != lh || dd != d * d || dh != d {
            return Err(self.shape_err("bmm_vec", m, h));
        }
        let mut out = Tensor::zeros(vec![lm, d]);
        {
            let mv = self.value(m).data();
            let hv = self.value(h).data();
            let dst = out.data_mut();
            for l in 0..lm {
                let mrow = &mv[l * d * d..(l + 1) * d * d];
                let hrow = &hv[l * d..(l + 1) * d];
                let orow = &mut dst[l * d..(l + 1) * d];
                for r in 0..d {
                    let mut acc = 0.0;
                    let mr = &mrow[r * d..(r + 1) * d];
                    for c in 0..d {
                        acc += mr[c] * hrow[c];
                    }
                    orow[r] = acc;
                }
            }
        }
        let needs = self.needs(m) || self.needs(h);
        Ok(self.push(out, Op::BmmVec(m, h, d), needs))
    }

    /// Repeats a rank-1 tensor as `n` identical rows.
    pub fn tile_rows(&mut self, v: Value, n: usize) -> Value {
        let c = self.value(v).len();
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(self.value(v).data());
        }
        let needs = self.needs(v);
        self.push(Tensor::matrix(n, c, data), Op::TileRows(v), needs)
    }

    /// Contiguous row slice `[start, start+len)` of a rank-2 tensor.
    pub fn slice_rows(&mut self, a: Value, start: usize, len: usize) -> Result<Value, DiffError> {
        let (r, c) = dims2(self.value(a));
        if start + len > r {
            return Err(DiffError::IndexOutOfRange {
                index: start + len,
                len: r,
            });
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::matrix(len, c, data), Op::SliceRows(a, start), needs))
    }

    /// Picks one element per row: `out[r, 0] = a[r, idx[r]]`.
    pub fn pick_per_row(&mut self, a: Value, idx: Arc<Vec<usize>>) -> Result<Value, DiffError> {
        let (r, c) = dims2(self.value(a));
        assert_eq!(idx.len(), r, "one pick per row");
        let mut data = Vec::with_capacity(r);
        for (i, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(DiffError::IndexOutOfRange { index: j, len: c });
            }
            data.push(self.value(a).data()[i * c + j]);
        }
        let out = Tensor::matrix(r, 1, data);
        let needs = self.needs(a);
        Ok(self.push(out, Op::PickPerRow(a, idx), needs))
    }

    /// Reverse-mode sweep from a scalar loss. Every reachable node that needs
    /// gradients receives one of matching shape; unreachable nodes get none.
    pub fn backward(&mut self, loss: Value) -> Result<Gradients, DiffError> {
        if self.value(loss).len() != 1 {
            return Err(DiffError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.accumulate(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn add_grad(&self, grads: &mut [Option<Tensor>], v: Value, delta: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn accumulate(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(grads, *a, gy.clone());
                self.add_grad(grads, *b, gy.clone());
            }
            Op::AddBias(a, bias) => {
                self.add_grad(grads, *a, gy.clone());
                if self.needs(*bias) {
                    let (r, c) = dims2(gy);
                    let mut db = vec![0.0; c];
                    for row in 0..r {
                        for j in 0..c {
                            db[j] += gy.data()[row * c + j];
                        }
                    }
                    self.add_grad(grads, *bias, Tensor::vector(db));
                }
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, *a, gy.clone());
                let neg = Tensor::new(gy.shape().to_vec(), gy.data().iter().map(|x| -x).collect());
                self.add_grad(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.add_grad(grads, *a, zip_map(gy, self.value(*b), |g, y| g * y));
                }
                if self.needs(*b) {
                    self.add_grad(grads, *b, zip_map(gy, self.value(*a), |g, x| g * x));
                }
            }
            Op::Div(a, b) => {
                if self.needs(*a) {
                    self.add_grad(grads, *a, zip_map(gy, self.value(*b), |g, y| g / y));
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let data = gy
                        .data()
                        .iter()
                        .zip(av.iter().zip(bv.iter()))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    self.add_grad(grads, *b, Tensor::new(gy.shape().to_vec(), data));
                }
            }
            Op::OneMinus(a) => {
                let neg = Tensor::new(gy.shape().to_vec(), gy.data().iter().map(|x| -x).collect());
                self.add_grad(grads, *a, neg);
            }
            Op::Scale(a, k) => {
                let data = gy.data().iter().map(|x| k * x).collect();
                self.add_grad(grads, *a, Tensor::new(gy.shape().to_vec(), data));
            }
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.value(*a));
                let n = self.value(*b).cols();
                if self.needs(*a) {
                    let mut da = Tensor::zeros(vec![m, k]);
                    gemm(
                        false,
                        true,
                        m,
                        n,
                        k,
                        1.0,
                        gy.data(),
                        self.value(*b).data(),
                        0.0,
                        da.data_mut(),
                    );
                    self.add_grad(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(vec![k, n]);
                    gemm(
                        true,
                        false,
                        k,
                        m,
                        n,
                        1.0,
                        self.value(*a).data(),
                        gy.data(),
                        0.0,
                        db.data_mut(),
                    );
                    self.add_grad(grads, *b, db);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = dims2(self.value(*a));
                let n = self.value(*b).rows();
                if self.needs(*a) {
                    let mut da = Tensor::zeros(vec![m, k]);
                    gemm(
                        false,
                        false,
                        m,
                        n,
                        k,
                        1.0,
                        gy.data(),
                        self.value(*b).data(),
                        0.0,
                        da.data_mut(),
                    );
                    self.add_grad(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(vec![n, k]);
                    gemm(
                        true,
                        false,
                        n,
                        m,
                        k,
                        1.0,
                        gy.data(),
                        self.value(*a).data(),
                        0.0,
                        db.data_mut(),
                    );
                    self.add_grad(grads, *b, db);
                }
            }
            Op::ConcatCols(parts) => {
                let r = gy.rows();
                let total = gy.cols();
                let mut off = 0usize;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.needs(p) {
                        let mut dp = Tensor::zeros(vec![r, c]);
                        {
                            let dst = dp.data_mut();
                            for i in 0..r {
                                dst[i * c..(i + 1) * c].copy_from_slice(
                                    &gy.data()[i * total + off..i * total + off + c],
                                );
                            }
                        }
                        self.add_grad(grads, p, dp);
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let c = gy.cols();
                let mut off = 0usize;
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.needs(p) {
                        let dp = Tensor::matrix(r, c, gy.data()[off * c..(off + r) * c].to_vec());
                        self.add_grad(grads, p, dp);
                    }
                    off += r;
                }
            }
            Op::Reshape(a) => {
                let dp = Tensor::new(self.value(*a).shape().to_vec(), gy.data().to_vec());
                self.add_grad(grads, *a, dp);
            }
            Op::SumAll(a) => {
                let g = gy.item();
                let t = self.value(*a);
                self.add_grad(grads, *a, Tensor::new(t.shape().to_vec(), vec![g; t.len()]));
            }
            Op::SumRows(a) => {
                let (r, c) = dims2(self.value(*a));
                let mut data = Vec::with_capacity(r * c);
                for _ in 0..r {
                    data.extend_from_slice(gy.data());
                }
                self.add_grad(grads, *a, Tensor::matrix(r, c, data));
            }
            Op::RowMul(a, s) => {
                let (r, c) = dims2(self.value(*a));
                if self.needs(*a) {
                    let sv = self.value(*s).data();
                    let mut da = Tensor::zeros(vec![r, c]);
                    {
                        let dst = da.data_mut();
                        for i in 0..r {
                            for j in 0..c {
                                dst[i * c + j] = gy.data()[i * c + j] * sv[i];
                            }
                        }
                    }
                    self.add_grad(grads, *a, da);
                }
                if self.needs(*s) {
                    let av = self.value(*a).data();
                    let mut ds = Tensor::zeros(vec![r, 1]);
                    {
                        let dst = ds.data_mut();
                        for i in 0..r {
                            let mut acc = 0.0;
                            for j in 0..c {
                                acc += gy.data()[i * c + j] * av[i * c + j];
                            }
                            dst[i] = acc;
                        }
                    }
                    self.add_grad(grads, *s, ds);
                }
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                self.add_grad(grads, *a, zip_map(gy, y, |g, y| g * y * (1.0 - y)));
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                self.add_grad(grads, *a, zip_map(gy, y, |g, y| g * (1.0 - y * y)));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                self.add_grad(
                    grads,
                    *a,
                    zip_map(gy, x, |g, x| if x > 0.0 { g } else { 0.0 }),
                );
            }
            Op::Exp(a) => {
                let y = &self.nodes[i].value;
                self.add_grad(grads, *a, zip_map(gy, y, |g, y| g * y));
            }
            Op::Ln(a) => {
                let x = self.value(*a);
                self.add_grad(grads, *a, zip_map(gy, x, |g, x| g / x.max(LN_FLOOR)));
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let (r, c) = dims2(y);
                let mut da = Tensor::zeros(vec![r, c]);
                {
                    let dst = da.data_mut();
                    for row in 0..r {
                        let yr = &y.data()[row * c..(row + 1) * c];
                        let gr = &gy.data()[row * c..(row + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..c {
                            dst[row * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::IndexRows(a, idx) => {
                let (r, c) = dims2(self.value(*a));
                let mut da = Tensor::zeros(vec![r, c]);
                {
                    let dst = da.data_mut();
                    for (row, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            dst[src * c + j] += gy.data()[row * c + j];
                        }
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::ScatterAddRows(a, idx) => {
                let (r, c) = dims2(self.value(*a));
                let mut da = Tensor::zeros(vec![r, c]);
                {
                    let dst = da.data_mut();
                    for (row, &t) in idx.iter().enumerate() {
                        dst[row * c..(row + 1) * c].copy_from_slice(&gy.data()[t * c..(t + 1) * c]);
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::BmmVec(m, h, d) => {
                let d = *d;
                let l = self.value(*m).rows();
                if self.needs(*m) {
                    let hv = self.value(*h).data();
                    let mut dm = Tensor::zeros(vec![l, d * d]);
                    {
                        let dst = dm.data_mut();
                        for lane in 0..l {
                            let gr = &gy.data()[lane * d..(lane + 1) * d];
                            let hr = &hv[lane * d..(lane + 1) * d];
                            let mrow = &mut dst[lane * d * d..(lane + 1) * d * d];
                            for r in 0..d {
                                for c in 0..d {
                                    mrow[r * d + c] = gr[r] * hr[c];
                                }
                            }
                        }
                    }
                    self.add_grad(grads, *m, dm);
                }
                if self.needs(*h) {
                    let mv = self.value(*m).data();
                    let mut dh = Tensor::zeros(vec![l, d]);
                    {
                        let dst = dh.data_mut();
                        for lane in 0..l {
                            let gr = &gy.data()[lane * d..(lane + 1) * d];
                            let mrow = &mv[lane * d * d..(lane + 1) * d * d];
                            let hrow = &mut dst[lane * d..(lane + 1) * d];
                            for r in 0..d {
                                let g = gr[r];
                                for c in 0..d {
                                    hrow[c] += g * mrow[r * d + c];
                                }
                            }
                        }
                    }
                    self.add_grad(grads, *h, dh);
                }
            }
            Op::TileRows(v) => {
                let c = self.value(*v).len();
                let r = gy.rows();
                let mut dv = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        dv[j] += gy.data()[i * c + j];
                    }
                }
                self.add_grad(grads, *v, Tensor::vector(dv));
            }
            Op::PickPerRow(a, idx) => {
                let (r, c) = dims2(self.value(*a));
                let mut da = Tensor::zeros(vec![r, c]);
                {
                    let dst = da.data_mut();
                    for (row, &j) in idx.iter().enumerate() {
                        dst[row * c + j] += gy.data()[row];
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::SliceRows(a, start) => {
                let (r, c) = dims2(self.value(*a));
                let len = gy.rows();
                let mut da = Tensor::zeros(vec![r, c]);
                da.data_mut()[start * c..(start + len) * c].copy_from_slice(gy.data());
                self.add_grad(grads, *a, da);
            }
        }
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.len(), b.len());
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry_and_simplex() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]));
        let p = tape.softmax_rows(z);
        assert_eq!(tape.value(p).data(), &[0.5, 0.5]);

        let z = tape.constant(Tensor::matrix(
            2,
            3,
            vec![1.0, -2.0, 0.5, 100.0, 100.0, 99.0],
        ));
        let p = tape.softmax_rows(z);
        for row in 0..2 {
            let s: f64 = (0..3).map(|j| tape.value(p).at(row, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
            for j in 0..3 {
                assert!(tape.value(p).at(row, j) > 0.0);
            }
        }
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let x = tape.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.matmul(i2, x).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn bilinear_gradient() {
        // loss = sum(x * y) => dloss/dx = y
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = tape.constant(Tensor::vector(vec![4.0, 5.0, 6.0]));
        let p = tape.mul(x, y).unwrap();
        let loss = tape.sum_all(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn sum_of_weights_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(2, 2, vec![0.3, -0.1, 0.5, 0.9]));
        let loss = tape.sum_all(w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn softmax_sum_gradient_is_zero() {
        // softmax rows sum to one regardless of the logits
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(1, 3, vec![0.3, -1.0, 2.0]));
        let p = tape.softmax_rows(z);
        let loss = tape.sum_all(p);
        let grads = tape.backward(loss).unwrap();
        for g in grads.get(z).unwrap().data() {
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(DiffError::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_mentions_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = tape.leaf(Tensor::matrix(2, 2, vec![0.0; 4]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    type OpBuilder = Box<dyn Fn(&mut Tape, Value, Value) -> Value>;

    /// Central finite differences against every primitive, driven through a
    /// scalar readout so each op's backward rule is isolated.
    #[test]
    fn finite_difference_all_primitives() {
        let cases: Vec<(&str, OpBuilder)> = vec![
            ("add", Box::new(|t, a, b| t.add(a, b).unwrap())),
            ("sub", Box::new(|t, a, b| t.sub(a, b).unwrap())),
            ("mul", Box::new(|t, a, b| t.mul(a, b).unwrap())),
            ("div", Box::new(|t, a, b| t.div(a, b).unwrap())),
            ("one_minus", Box::new(|t, a, _| t.one_minus(a))),
            ("scale", Box::new(|t, a, _| t.scale(a, -1.7))),
            ("sigmoid", Box::new(|t, a, _| t.sigmoid(a))),
            ("tanh", Box::new(|t, a, _| t.tanh(a))),
            ("relu", Box::new(|t, a, _| t.relu(a))),
            ("exp", Box::new(|t, a, _| t.exp(a))),
            ("softmax", Box::new(|t, a, _| t.softmax_rows(a))),
            (
                "concat_cols",
                Box::new(|t, a, b| t.concat_cols(&[a, b]).unwrap()),
            ),
            (
                "concat_rows",
                Box::new(|t, a, b| t.concat_rows(&[a, b]).unwrap()),
            ),
            (
                "reshape",
                Box::new(|t, a, _| t.reshape(a, vec![6, 1]).unwrap()),
            ),
            ("sum_rows", Box::new(|t, a, _| t.sum_rows(a))),
            ("matmul_bt", Box::new(|t, a, b| t.matmul_bt(a, b).unwrap())),
            (
                "index_rows",
                Box::new(|t, a, _| t.index_rows(a, Arc::new(vec![1, 0, 1])).unwrap()),
            ),
            (
                "scatter_add",
                Box::new(|t, a, _| t.scatter_add_rows(a, Arc::new(vec![1, 0]), 3).unwrap()),
            ),
            (
                "slice_rows",
                Box::new(|t, a, _| t.slice_rows(a, 1, 1).unwrap()),
            ),
        ];
        for (name, build) in cases {
            let base_a = Tensor::matrix(2, 3, vec![0.4, -0.6, 1.2, 0.9, -1.1, 0.3]);
            let base_b = Tensor::matrix(2, 3, vec![1.3, 0.7, -0.2, 0.5, 1.9, -0.8]);
            check_fd(name, &base_a, &base_b, &build);
        }
    }

    #[test]
    fn finite_difference_structured_ops() {
        // matmul [2,3]x[3,2]
        check_fd_shapes(
            "matmul",
            Tensor::matrix(2, 3, vec![0.4, -0.6, 1.2, 0.9, -1.1, 0.3]),
            Tensor::matrix(3, 2, vec![1.3, 0.7, -0.2, 0.5, 1.9, -0.8]),
            &|t, a, b| t.matmul(a, b).unwrap(),
        );
        // add_bias [2,3] + [3]
        check_fd_shapes(
            "add_bias",
            Tensor::matrix(2, 3, vec![0.4, -0.6, 1.2, 0.9, -1.1, 0.3]),
            Tensor::vector(vec![0.2, -0.5, 0.8]),
            &|t, a, b| t.add_bias(a, b).unwrap(),
        );
        // row_mul [2,3] x [2,1]
        check_fd_shapes(
            "row_mul",
            Tensor::matrix(2, 3, vec![0.4, -0.6, 1.2, 0.9, -1.1, 0.3]),
            Tensor::matrix(2, 1, vec![0.7, -1.2]),
            &|t, a, b| t.row_mul(a, b).unwrap(),
        );
        // bmm_vec: 2 lanes, d=2
        check_fd_shapes(
            "bmm_vec",
            Tensor::matrix(2, 4, vec![0.4, -0.6, 1.2, 0.9, -1.1, 0.3, 0.8, -0.4]),
            Tensor::matrix(2, 2, vec![1.3, 0.7, -0.2, 0.5]),
            &|t, a, b| t.bmm_vec(a, b, 2).unwrap(),
        );
        // tile_rows [3] -> [4,3]
        check_fd_shapes(
            "tile_rows",
            Tensor::vector(vec![0.4, -0.6, 1.2]),
            Tensor::vector(vec![1.0]),
            &|t, a, _| t.tile_rows(a, 4),
        );
        // pick_per_row + ln
        check_fd_shapes(
            "pick_ln",
            Tensor::matrix(2, 3, vec![0.4, 0.6, 1.2, 0.9, 1.1, 0.3]),
            Tensor::vector(vec![1.0]),
            &|t, a, _| {
                let p = t.pick_per_row(a, Arc::new(vec![2, 0])).unwrap();
                t.ln(p)
            },
        );
    }

    fn check_fd(
        name: &str,
        a0: &Tensor,
        b0: &Tensor,
        build: &dyn Fn(&mut Tape, Value, Value) -> Value,
    ) {
        check_fd_shapes(name, a0.clone(), b0.clone(), build)
    }

    /// Reduces the op output with a fixed weighting so the loss is scalar,
    /// then compares analytic and central-difference gradients.
    fn check_fd_shapes(
        name: &str,
        a0: Tensor,
        b0: Tensor,
        build: &dyn Fn(&mut Tape, Value, Value) -> Value,
    ) {
        let weights = |n: usize| {
            Tensor::new(
                vec![n],
                (0..n).map(|i| 0.3 + 0.7 * (i as f64).sin()).collect(),
            )
        };
        let eval = |a: &Tensor, b: &Tensor| -> (f64, Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let va = tape.leaf(a.clone());
            let vb = tape.leaf(b.clone());
            let out = build(&mut tape, va, vb);
            let w = {
                let n = tape.value(out).len();
                let shape = tape.value(out).shape().to_vec();
                let mut t = weights(n);
                t = Tensor::new(shape, t.data().to_vec());
                tape.constant(t)
            };
            let weighted = tape.mul(out, w).unwrap();
            let loss = tape.sum_all(weighted);
            let lv = tape.value(loss).item();
            let mut grads = tape.backward(loss).unwrap();
            let ga = grads
                .take(va)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; a.len()]);
            let gb = grads
                .take(vb)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; b.len()]);
            (lv, ga, gb)
        };

        let (_, ga, gb) = eval(&a0, &b0);
        let h = 1e-5;
        for (which, tensor, analytic) in [("a", &a0, &ga), ("b", &b0, &gb)] {
            for i in 0..tensor.len() {
                let mut plus = tensor.clone();
                plus.data_mut()[i] += h;
                let mut minus = tensor.clone();
                minus.data_mut()[i] -= h;
                let (lp, lm) = if which == "a" {
                    (eval(&plus, &b0).0, eval(&minus, &b0).0)
                } else {
                    (eval(&a0, &plus).0, eval(&a0, &minus).0)
                };
                let fd = (lp - lm) / (2.0 * h);
                let an = analytic[i];
                let denom = an.abs().max(fd.abs()).max(1e-3);
                let rel = (an - fd).abs() / denom;
                assert!(
                    rel <= 1e-6,
                    "{name}/{which}[{i}]: analytic {an} vs fd {fd} (rel {rel:.2e})"
                );
            }
        }
    }
}
