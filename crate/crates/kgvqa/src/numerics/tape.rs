//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Forward calls record primitive ops into an arena; `backward` replays the
//! tape in reverse creation order, which keeps gradient accumulation
//! deterministic and bitwise-reproducible for a fixed seed.
//!
//! Every op validates shapes and rejects non-finite outputs. Elementwise
//! broadcasting is restricted to scalar-vs-tensor and exact shape match.

use crate::error::{Error, Result};
use crate::numerics::tensor::{Real, Tensor};
use std::rc::Rc;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Fixed sparse matrix in CSR form. Used for neighbor aggregation where the
/// matrix is data (graph structure), not a trainable quantity.
#[derive(Debug, Clone)]
pub struct SparseMatrix<T: Real> {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SparseMatrix<T> {
    /// Build from per-row entry lists. Entries within a row keep their order.
    pub fn from_rows(n_rows: usize, n_cols: usize, rows: &[Vec<(usize, T)>]) -> Result<Self> {
        if rows.len() != n_rows {
            return Err(Error::ShapeMismatch {
                op: "SparseMatrix::from_rows",
                detail: format!("{} row lists for {} rows", rows.len(), n_rows),
            });
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for &(c, v) in row {
                if c >= n_cols {
                    return Err(Error::ShapeMismatch {
                        op: "SparseMatrix::from_rows",
                        detail: format!("column {} out of bounds ({})", c, n_cols),
                    });
                }
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix { n_rows, n_cols, row_ptr, col_idx, values })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// S · X for dense X (n_cols × d).
    pub fn matmul(&self, x: &Tensor<T>) -> Tensor<T> {
        let d = x.cols();
        let mut out = Tensor::zeros(vec![self.n_rows, d]);
        let xd = x.data();
        let od = out.data_mut();
        for r in 0..self.n_rows {
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[e];
                let w = self.values[e];
                let src = &xd[c * d..(c + 1) * d];
                let dst = &mut od[r * d..(r + 1) * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += w * *s;
                }
            }
        }
        out
    }

    /// Sᵀ · G for dense G (n_rows × d). Scatter form of the backward pass.
    pub fn matmul_transpose(&self, g: &Tensor<T>) -> Tensor<T> {
        let d = g.cols();
        let mut out = Tensor::zeros(vec![self.n_cols, d]);
        let gd = g.data();
        let od = out.data_mut();
        for r in 0..self.n_rows {
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[e];
                let w = self.values[e];
                let src = &gd[r * d..(r + 1) * d];
                let dst = &mut od[c * d..(c + 1) * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += w * *s;
                }
            }
        }
        out
    }
}

/// Elementwise op selector, for callers that drive ops by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Relu,
    Sigmoid,
    Add,
    Mul,
}

enum Op<T: Real> {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Transpose { x: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { x: TensorId, c: T },
    AddRowBroadcast { x: TensorId, bias: TensorId },
    BroadcastRows { v: TensorId, n: usize },
    Relu { x: TensorId },
    Sigmoid { x: TensorId },
    SoftmaxRows { x: TensorId },
    GatherRows { x: TensorId, indices: Rc<Vec<usize>> },
    SpMm { s: Rc<SparseMatrix<T>>, x: TensorId },
    ConcatCols { parts: Vec<TensorId> },
    ConcatRows { parts: Vec<TensorId> },
    MeanRows { x: TensorId },
    SumAll { x: TensorId },
    MeanAll { x: TensorId },
    BceLoss { pred: TensorId, target: Tensor<T> },
    RmsNormRows { x: TensorId, eps: T },
    StopGradient {},
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Clamp bound applied to BCE predictions before the log.
pub const BCE_EPS: f64 = 1e-7;

/// Recorded forward pass. One tape per forward/backward cycle; independent
/// tapes may live on different threads.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    /// Fault-injection hook for the gradient-check harness: scales the
    /// gradient flowing into one node, simulating a broken backward rule.
    fault: Option<(TensorId, T)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), fault: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Corrupt the gradient flowing into `id` by `scale`. Verification
    /// harness only: lets tests prove the finite-difference checker catches
    /// a wrong backward rule.
    pub fn inject_backward_fault(&mut self, id: TensorId, scale: T) {
        self.fault = Some((id, scale));
    }

    pub fn value(&self, id: TensorId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: &'static str, value: Tensor<T>, opcode: Op<T>) -> Result<TensorId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        self.nodes.push(Node { value, op: opcode });
        Ok(TensorId(self.nodes.len() - 1))
    }

    /// Record an input or parameter value. Leaves receive gradients but have
    /// no backward rule of their own.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<TensorId> {
        self.push("leaf", value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", ta.shape(), tb.shape()),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Tensor::zeros(vec![m, n]);
        T::gemm(m, k, n, ta.data(), tb.data(), out.data_mut());
        self.push("matmul", out, Op::MatMul { a, b })
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let t = self.nodes[x.0].value.transposed();
        self.push("transpose", t, Op::Transpose { x })
    }

    fn binary_shapes(
        op: &'static str,
        a: &Tensor<T>,
        b: &Tensor<T>,
    ) -> Result<Vec<usize>> {
        if a.shape() == b.shape() {
            Ok(a.shape().to_vec())
        } else if a.is_scalar() {
            Ok(b.shape().to_vec())
        } else if b.is_scalar() {
            Ok(a.shape().to_vec())
        } else {
            Err(Error::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?} (scalar or exact match only)", a.shape(), b.shape()),
            })
        }
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = Self::binary_shapes("add", ta, tb)?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let av = if ta.is_scalar() { ta.item() } else { ta.data()[i] };
            let bv = if tb.is_scalar() { tb.item() } else { tb.data()[i] };
            data.push(av + bv);
        }
        self.push("add", Tensor::new(shape, data)?, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = Self::binary_shapes("sub", ta, tb)?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let av = if ta.is_scalar() { ta.item() } else { ta.data()[i] };
            let bv = if tb.is_scalar() { tb.item() } else { tb.data()[i] };
            data.push(av - bv);
        }
        self.push("sub", Tensor::new(shape, data)?, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = Self::binary_shapes("mul", ta, tb)?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let av = if ta.is_scalar() { ta.item() } else { ta.data()[i] };
            let bv = if tb.is_scalar() { tb.item() } else { tb.data()[i] };
            data.push(av * bv);
        }
        self.push("mul", Tensor::new(shape, data)?, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: TensorId, c: T) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        let data: Vec<T> = t.data().iter().map(|v| *v * c).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push("scale", out, Op::Scale { x, c })
    }

    /// (n×d) + (1×d), the bias-over-rows pattern. Kept separate from `add`
    /// so the elementwise broadcast rule stays scalar-or-exact.
    pub fn add_row_broadcast(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if tx.shape().len() != 2 || tb.shape().len() != 2 || tb.rows() != 1 || tb.cols() != tx.cols()
        {
            return Err(Error::ShapeMismatch {
                op: "add_row_broadcast",
                detail: format!("{:?} + {:?}", tx.shape(), tb.shape()),
            });
        }
        let (r, c) = (tx.rows(), tx.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(tx.data()[i * c + j] + tb.data()[j]);
            }
        }
        self.push("add_row_broadcast", Tensor::new(vec![r, c], data)?, Op::AddRowBroadcast {
            x,
            bias,
        })
    }

    /// Repeat a (1×d) row n times. Backward sums over rows.
    pub fn broadcast_rows(&mut self, v: TensorId, n: usize) -> Result<TensorId> {
        let tv = &self.nodes[v.0].value;
        if tv.shape().len() != 2 || tv.rows() != 1 {
            return Err(Error::ShapeMismatch {
                op: "broadcast_rows",
                detail: format!("{:?} is not a row vector", tv.shape()),
            });
        }
        let d = tv.cols();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(tv.data());
        }
        self.push("broadcast_rows", Tensor::new(vec![n, d], data)?, Op::BroadcastRows { v, n })
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        let data: Vec<T> = t.data().iter().map(|v| v.max(T::zero())).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push("relu", out, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        let one = T::one();
        let data: Vec<T> = t.data().iter().map(|v| one / (one + (-*v).exp())).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push("sigmoid", out, Op::Sigmoid { x })
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        if t.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "softmax_rows",
                detail: format!("{:?} is not a matrix", t.shape()),
            });
        }
        let (r, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|v| (*v - m).exp()).collect();
            let sum = exps.iter().fold(T::zero(), |acc, v| acc + *v);
            data.extend(exps.iter().map(|v| *v / sum));
        }
        self.push("softmax_rows", Tensor::new(vec![r, c], data)?, Op::SoftmaxRows { x })
    }

    /// Select rows by index (embedding lookup, answer-node extraction).
    /// Backward scatter-adds into the source.
    pub fn gather_rows(&mut self, x: TensorId, indices: Vec<usize>) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        if t.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                detail: format!("{:?} is not a matrix", t.shape()),
            });
        }
        let (r, c) = (t.rows(), t.cols());
        for &i in &indices {
            if i >= r {
                return Err(Error::ShapeMismatch {
                    op: "gather_rows",
                    detail: format!("row {} out of bounds ({})", i, r),
                });
            }
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in &indices {
            data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![indices.len(), c], data)?;
        self.push("gather_rows", out, Op::GatherRows { x, indices: Rc::new(indices) })
    }

    /// S · X where S is a fixed sparse matrix (graph aggregation).
    pub fn spmm(&mut self, s: Rc<SparseMatrix<T>>, x: TensorId) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        if t.shape().len() != 2 || t.rows() != s.n_cols() {
            return Err(Error::ShapeMismatch {
                op: "spmm",
                detail: format!("S is {}x{}, X is {:?}", s.n_rows(), s.n_cols(), t.shape()),
            });
        }
        let out = s.matmul(t);
        self.push("spmm", out, Op::SpMm { s, x })
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_cols of zero parts".into()));
        }
        let r = self.nodes[parts[0].0].value.rows();
        let mut total = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            if t.shape().len() != 2 || t.rows() != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts differ: {:?}", t.shape()),
                });
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let t = &self.nodes[p.0].value;
                let c = t.cols();
                data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
            }
        }
        self.push("concat_cols", Tensor::new(vec![r, total], data)?, Op::ConcatCols {
            parts: parts.to_vec(),
        })
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_rows of zero parts".into()));
        }
        let c = self.nodes[parts[0].0].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            if t.shape().len() != 2 || t.cols() != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("column counts differ: {:?}", t.shape()),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push("concat_rows", Tensor::new(vec![rows, c], data)?, Op::ConcatRows {
            parts: parts.to_vec(),
        })
    }

    /// Column means over rows: (n×d) → (1×d).
    pub fn mean_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        if t.shape().len() != 2 || t.rows() == 0 {
            return Err(Error::ShapeMismatch {
                op: "mean_rows",
                detail: format!("{:?}", t.shape()),
            });
        }
        let (r, c) = (t.rows(), t.cols());
        let inv = T::one() / T::from_f64(r as f64);
        let mut data = vec![T::zero(); c];
        for i in 0..r {
            for j in 0..c {
                data[j] += t.data()[i * c + j];
            }
        }
        for v in data.iter_mut() {
            *v *= inv;
        }
        self.push("mean_rows", Tensor::new(vec![1, c], data)?, Op::MeanRows { x })
    }

    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        let s = t.data().iter().fold(T::zero(), |acc, v| acc + *v);
        self.push("sum_all", Tensor::scalar(s), Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: TensorId) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        if t.is_empty() {
            return Err(Error::InvalidArgument("mean_all of empty tensor".into()));
        }
        let s = t.data().iter().fold(T::zero(), |acc, v| acc + *v);
        let m = s / T::from_f64(t.len() as f64);
        self.push("mean_all", Tensor::scalar(m), Op::MeanAll { x })
    }

    /// Mean binary cross entropy against a fixed target:
    /// −mean[t·log p + (1−t)·log(1−p)].
    ///
    /// Predictions are squashed affinely into [ε, 1−ε] (p ← ε + (1−2ε)p)
    /// before the log. Unlike a hard clamp this keeps the op smooth, so the
    /// backward rule matches finite differences everywhere and a saturated
    /// prediction still receives a restoring gradient.
    pub fn bce_loss(&mut self, pred: TensorId, target: &Tensor<T>) -> Result<TensorId> {
        let tp = &self.nodes[pred.0].value;
        if tp.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "bce_loss",
                detail: format!("pred {:?} vs target {:?}", tp.shape(), target.shape()),
            });
        }
        let eps = T::from_f64(BCE_EPS);
        let one = T::one();
        let squash = one - (eps + eps);
        let mut acc = T::zero();
        for (p, t) in tp.data().iter().zip(target.data()) {
            let ps = eps + squash * *p;
            acc += -(*t * ps.ln() + (one - *t) * (one - ps).ln());
        }
        let loss = acc / T::from_f64(tp.len() as f64);
        self.push("bce_loss", Tensor::scalar(loss), Op::BceLoss { pred, target: target.clone() })
    }

    /// Row-wise RMS normalization: y = x / sqrt(mean(x²) + eps). Pins the
    /// scale of pooled states so downstream heads see O(1) inputs.
    pub fn rms_norm_rows(&mut self, x: TensorId, eps: f64) -> Result<TensorId> {
        let t = &self.nodes[x.0].value;
        if t.shape().len() != 2 || t.cols() == 0 {
            return Err(Error::ShapeMismatch {
                op: "rms_norm_rows",
                detail: format!("{:?}", t.shape()),
            });
        }
        let (r, c) = (t.rows(), t.cols());
        let e = T::from_f64(eps);
        let inv_c = T::one() / T::from_f64(c as f64);
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let ms = row.iter().fold(T::zero(), |acc, v| acc + *v * *v) * inv_c;
            let denom = (ms + e).sqrt();
            data.extend(row.iter().map(|v| *v / denom));
        }
        self.push("rms_norm_rows", Tensor::new(vec![r, c], data)?, Op::RmsNormRows {
            x,
            eps: e,
        })
    }

    /// Forward identity; gradient does not flow past this node.
    pub fn stop_gradient(&mut self, x: TensorId) -> Result<TensorId> {
        let t = self.nodes[x.0].value.clone();
        self.push("stop_gradient", t, Op::StopGradient {})
    }

    /// Dispatch table for the named elementwise ops.
    pub fn elementwise(
        &mut self,
        op: Elementwise,
        a: TensorId,
        b: Option<TensorId>,
    ) -> Result<TensorId> {
        match (op, b) {
            (Elementwise::Relu, None) => self.relu(a),
            (Elementwise::Sigmoid, None) => self.sigmoid(a),
            (Elementwise::Add, Some(b)) => self.add(a, b),
            (Elementwise::Mul, Some(b)) => self.mul(a, b),
            _ => Err(Error::InvalidArgument(format!("elementwise {:?}: wrong arity", op))),
        }
    }

    /// Reverse pass from a scalar loss. Returns one gradient slot per node;
    /// unreached nodes hold `None`.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients<T>> {
        let lt = &self.nodes[loss.0].value;
        if !lt.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let mut g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if let Some((fid, scale)) = self.fault {
                if fid.0 == idx {
                    for v in g.data_mut() {
                        *v *= scale;
                    }
                }
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], id: TensorId, delta: Tensor<T>) {
        match &mut grads[id.0] {
            Some(g) => {
                debug_assert_eq!(g.shape(), delta.shape());
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(
        &self,
        idx: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::StopGradient {} => {}
            Op::MatMul { a, b } => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                // dA = G · Bᵀ ; dB = Aᵀ · G
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let bt = tb.transposed();
                let mut da = Tensor::zeros(vec![m, k]);
                T::gemm(m, n, k, g.data(), bt.data(), da.data_mut());
                Self::accumulate(grads, *a, da);
                let at = ta.transposed();
                let mut db = Tensor::zeros(vec![k, n]);
                T::gemm(k, m, n, at.data(), g.data(), db.data_mut());
                Self::accumulate(grads, *b, db);
            }
            Op::Transpose { x } => {
                Self::accumulate(grads, *x, g.transposed());
            }
            Op::Add { a, b } => {
                for p in [*a, *b] {
                    let tp = &self.nodes[p.0].value;
                    if tp.shape() == g.shape() {
                        Self::accumulate(grads, p, g.clone());
                    } else {
                        // scalar side: gradient is the sum
                        let s = g.data().iter().fold(T::zero(), |acc, v| acc + *v);
                        Self::accumulate(grads, p, Tensor::scalar(s));
                    }
                }
            }
            Op::Sub { a, b } => {
                let ta = &self.nodes[a.0].value;
                if ta.shape() == g.shape() {
                    Self::accumulate(grads, *a, g.clone());
                } else {
                    let s = g.data().iter().fold(T::zero(), |acc, v| acc + *v);
                    Self::accumulate(grads, *a, Tensor::scalar(s));
                }
                let tb = &self.nodes[b.0].value;
                let neg: Vec<T> = g.data().iter().map(|v| -*v).collect();
                if tb.shape() == g.shape() {
                    Self::accumulate(grads, *b, Tensor::new(g.shape().to_vec(), neg)?);
                } else {
                    let s = neg.iter().fold(T::zero(), |acc, v| acc + *v);
                    Self::accumulate(grads, *b, Tensor::scalar(s));
                }
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let n = g.len();
                let mut da = Vec::with_capacity(n);
                let mut db = Vec::with_capacity(n);
                for i in 0..n {
                    let av = if ta.is_scalar() { ta.item() } else { ta.data()[i] };
                    let bv = if tb.is_scalar() { tb.item() } else { tb.data()[i] };
                    da.push(g.data()[i] * bv);
                    db.push(g.data()[i] * av);
                }
                if ta.is_scalar() && !g.is_scalar() {
                    let s = da.iter().fold(T::zero(), |acc, v| acc + *v);
                    Self::accumulate(grads, *a, Tensor::scalar(s));
                } else {
                    Self::accumulate(grads, *a, Tensor::new(g.shape().to_vec(), da)?);
                }
                if tb.is_scalar() && !g.is_scalar() {
                    let s = db.iter().fold(T::zero(), |acc, v| acc + *v);
                    Self::accumulate(grads, *b, Tensor::scalar(s));
                } else {
                    Self::accumulate(grads, *b, Tensor::new(g.shape().to_vec(), db)?);
                }
            }
            Op::Scale { x, c } => {
                let data: Vec<T> = g.data().iter().map(|v| *v * *c).collect();
                Self::accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::AddRowBroadcast { x, bias } => {
                Self::accumulate(grads, *x, g.clone());
                let (r, c) = (g.rows(), g.cols());
                let mut col = vec![T::zero(); c];
                for i in 0..r {
                    for j in 0..c {
                        col[j] += g.data()[i * c + j];
                    }
                }
                Self::accumulate(grads, *bias, Tensor::new(vec![1, c], col)?);
            }
            Op::BroadcastRows { v, n } => {
                let c = g.cols();
                let mut col = vec![T::zero(); c];
                for i in 0..*n {
                    for j in 0..c {
                        col[j] += g.data()[i * c + j];
                    }
                }
                Self::accumulate(grads, *v, Tensor::new(vec![1, c], col)?);
            }
            Op::Relu { x } => {
                let tx = &self.nodes[x.0].value;
                let data: Vec<T> = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, xv)| if *xv > T::zero() { *gv } else { T::zero() })
                    .collect();
                Self::accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Sigmoid { x } => {
                let y = &node.value;
                let one = T::one();
                let data: Vec<T> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| *gv * *yv * (one - *yv))
                    .collect();
                Self::accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::SoftmaxRows { x } => {
                let y = &node.value;
                let (r, c) = (y.rows(), y.cols());
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let dot = yr.iter().zip(gr).fold(T::zero(), |acc, (yv, gv)| acc + *yv * *gv);
                    for j in 0..c {
                        data.push(yr[j] * (gr[j] - dot));
                    }
                }
                Self::accumulate(grads, *x, Tensor::new(vec![r, c], data)?);
            }
            Op::GatherRows { x, indices } => {
                let tx = &self.nodes[x.0].value;
                let c = tx.cols();
                let mut dx = Tensor::zeros(vec![tx.rows(), c]);
                for (pos, &i) in indices.iter().enumerate() {
                    let src = &g.data()[pos * c..(pos + 1) * c];
                    let dst = &mut dx.data_mut()[i * c..(i + 1) * c];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += *s;
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::SpMm { s, x } => {
                Self::accumulate(grads, *x, s.matmul_transpose(g));
            }
            Op::ConcatCols { parts } => {
                let r = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.nodes[p.0].value.cols();
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let row = &g.data()[i * g.cols()..(i + 1) * g.cols()];
                        data.extend_from_slice(&row[offset..offset + c]);
                    }
                    Self::accumulate(grads, p, Tensor::new(vec![r, c], data)?);
                    offset += c;
                }
            }
            Op::ConcatRows { parts } => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.nodes[p.0].value.rows();
                    let data = g.data()[offset * c..(offset + r) * c].to_vec();
                    Self::accumulate(grads, p, Tensor::new(vec![r, c], data)?);
                    offset += r;
                }
            }
            Op::MeanRows { x } => {
                let tx = &self.nodes[x.0].value;
                let (r, c) = (tx.rows(), tx.cols());
                let inv = T::one() / T::from_f64(r as f64);
                let mut data = Vec::with_capacity(r * c);
                for _ in 0..r {
                    data.extend(g.data().iter().map(|v| *v * inv));
                }
                Self::accumulate(grads, *x, Tensor::new(vec![r, c], data)?);
            }
            Op::SumAll { x } => {
                let tx = &self.nodes[x.0].value;
                let gv = g.item();
                Self::accumulate(grads, *x, Tensor::full(tx.shape().to_vec(), gv));
            }
            Op::MeanAll { x } => {
                let tx = &self.nodes[x.0].value;
                let gv = g.item() / T::from_f64(tx.len() as f64);
                Self::accumulate(grads, *x, Tensor::full(tx.shape().to_vec(), gv));
            }
            Op::BceLoss { pred, target } => {
                let tp = &self.nodes[pred.0].value;
                let eps = T::from_f64(BCE_EPS);
                let one = T::one();
                let squash = one - (eps + eps);
                let inv_n = T::one() / T::from_f64(tp.len() as f64);
                let gv = g.item();
                let data: Vec<T> = tp
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| {
                        let ps = eps + squash * *p;
                        gv * squash * (ps - *t) / (ps * (one - ps)) * inv_n
                    })
                    .collect();
                Self::accumulate(grads, *pred, Tensor::new(tp.shape().to_vec(), data)?);
            }
            Op::RmsNormRows { x, eps } => {
                let tx = &self.nodes[x.0].value;
                let (r, c) = (tx.rows(), tx.cols());
                let inv_c = T::one() / T::from_f64(c as f64);
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    let row = &tx.data()[i * c..(i + 1) * c];
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let ms = row.iter().fold(T::zero(), |acc, v| acc + *v * *v) * inv_c;
                    let denom = (ms + *eps).sqrt();
                    // y = x/denom; dx = g/denom − x · (g·x) / (c · denom³)
                    let gx = gr.iter().zip(row).fold(T::zero(), |acc, (gv, xv)| acc + *gv * *xv);
                    let cube = denom * denom * denom;
                    for j in 0..c {
                        data.push(gr[j] / denom - row[j] * gx * inv_c / cube);
                    }
                }
                Self::accumulate(grads, *x, Tensor::new(vec![r, c], data)?);
            }
        }
        Ok(())
    }
}

/// Per-node gradients produced by one backward pass.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: TensorId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a node, zeros if the loss never reached it.
    pub fn get_or_zeros(&self, id: TensorId, shape: &[usize]) -> Tensor<T> {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = tape.leaf(t2(&[vec![1., 0.], vec![0., 1.]])).unwrap();
        let a = tape.leaf(t2(&[vec![3., -1.], vec![2., 7.]])).unwrap();
        let out = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(out), tape.value(a));
    }

    #[test]
    fn hand_matmul() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(&[vec![1., 2.], vec![3., 4.]])).unwrap();
        let b = tape.leaf(t2(&[vec![5.], vec![6.]])).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[17., 39.]);
    }

    #[test]
    fn matmul_rejects_dim_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3])).unwrap();
        let b = tape.leaf(Tensor::zeros(vec![2, 3])).unwrap();
        assert!(tape.matmul(a, b).is_err());
    }

    #[test]
    fn sigmoid_values_and_grad_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0f64)).unwrap();
        let y = tape.sigmoid(x).unwrap();
        assert!((tape.value(y).item() - 0.5).abs() < 1e-12);
        let s = tape.sum_all(y).unwrap();
        let grads = tape.backward(s).unwrap();
        // σ'(0) = σ(0)(1−σ(0)) = 0.25
        assert!((grads.get(x).unwrap().item() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![-3.0f64, 3.0]).unwrap()).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 3.0]);
    }

    #[test]
    fn bce_reference_points() {
        // pred = target = 0.5 → ln 2
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::scalar(0.5f64)).unwrap();
        let l = tape.bce_loss(p, &Tensor::scalar(0.5)).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);

        // pred = target = 0.9 → −(0.9 ln 0.9 + 0.1 ln 0.1) ≈ 0.3251
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::scalar(0.9f64)).unwrap();
        let l = tape.bce_loss(p, &Tensor::scalar(0.9)).unwrap();
        let expect = -(0.9 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        // the epsilon squash shifts the loss by O(1e-7)
        assert!((tape.value(l).item() - expect).abs() < 1e-6);
    }

    #[test]
    fn bce_rejects_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::zeros(vec![2])).unwrap();
        assert!(tape.bce_loss(p, &Tensor::zeros(vec![3])).is_err());
    }

    #[test]
    fn add_broadcast_rule() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![3], vec![1.0f64, 2.0, 3.0]).unwrap()).unwrap();
        let s = tape.leaf(Tensor::scalar(10.0f64)).unwrap();
        let out = tape.add(a, s).unwrap();
        assert_eq!(tape.value(out).data(), &[11.0, 12.0, 13.0]);

        let b = tape.leaf(Tensor::zeros(vec![4])).unwrap();
        assert!(tape.add(a, b).is_err(), "mismatched non-scalar shapes must fail");
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0f64)).unwrap();
        let y = tape.stop_gradient(x).unwrap();
        let z = tape.mul(y, y).unwrap();
        let grads = tape.backward(z).unwrap();
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut tape = Tape::new();
        let big = tape.leaf(Tensor::scalar(f64::MAX)).unwrap();
        assert!(matches!(tape.mul(big, big), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(vec![2, 2])).unwrap();
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn spmm_mean_aggregation() {
        // row 0 averages rows 1 and 2 of X
        let s = SparseMatrix::from_rows(2, 3, &[vec![(1, 0.5f64), (2, 0.5)], vec![]]).unwrap();
        let x = t2(&[vec![10., 0.], vec![2., 4.], vec![4., 8.]]);
        let out = s.matmul(&x);
        assert_eq!(out.data(), &[3., 6., 0., 0.]);
    }

    #[test]
    fn gather_then_backward_scatters() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(&[vec![1., 2.], vec![3., 4.], vec![5., 6.]])).unwrap();
        let g = tape.gather_rows(x, vec![2, 0, 2]).unwrap();
        assert_eq!(tape.value(g).data(), &[5., 6., 1., 2., 5., 6.]);
        let s = tape.sum_all(g).unwrap();
        let grads = tape.backward(s).unwrap();
        // row 2 selected twice, row 1 never
        assert_eq!(grads.get(x).unwrap().data(), &[1., 1., 0., 0., 2., 2.]);
    }
}
