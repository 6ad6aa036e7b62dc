//! Dense reverse-mode automatic differentiation on a tape.
//!
//! Tensors are 64-bit-float matrices recorded on a shared [`Tape`]. Every
//! primitive computes its forward value eagerly and stores enough to replay
//! the chain rule. The backward pass appends its own operations to the tape,
//! so gradients are themselves differentiable, which is what makes the
//! gradient-penalty term of the critic loss trainable without a separate
//! second-order engine.
//!
//! Reductions run in a fixed left-to-right order, so identical inputs give
//! bit-identical outputs and equivariance checks are only exposed to
//! reassociation error.

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("backward root must be a scalar, got {0:?}")]
    NonScalarRoot([usize; 2]),
    #[error("tape already consumed by a previous backward; call reset_grads first")]
    TapeConsumed,
    #[error("tensors are recorded on different tapes")]
    TapeMixed,
    #[error("invalid slice [{from}, {to}) of {cols} columns")]
    BadSlice { from: usize, to: usize, cols: usize },
    #[error("gather/scatter index {idx} out of range for {rows} rows")]
    BadIndex { idx: usize, rows: usize },
}

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    /// `[r, c] + [1, c]`, the bias term of a linear layer.
    AddBias(usize, usize),
    ConcatCols(usize, usize),
    SliceCols(usize, usize, usize),
    /// `[r, c] -> [1, c]`
    SumRows(usize),
    /// `[r, c] -> [r, 1]`
    SumCols(usize),
    ExpandRows(usize),
    ExpandCols(usize),
    GatherRows(usize, Rc<Vec<usize>>),
    /// `out[idx[k], :] += src[k, :]`; dual of GatherRows.
    ScatterAddRows(usize, Rc<Vec<usize>>),
    Celu(usize, f64),
    /// Elementwise derivative of celu; kept as a primitive so the penalty
    /// term stays differentiable.
    CeluGrad(usize, f64),
    Sigmoid(usize),
    SoftmaxCols(usize),
    Sqrt(usize),
    Recip(usize),
    Detach,
}

struct Node {
    shape: [usize; 2],
    values: Vec<f64>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

struct TapeInner {
    nodes: Vec<Node>,
    consumed: bool,
    /// Set when a celu primitive evaluates exactly at its kink.
    kink_hit: bool,
}

/// Shared recording tape. Cloning is cheap; all clones append to the same
/// node list. Single-threaded by design.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                consumed: false,
                kink_hit: false,
            })),
        }
    }

    fn push(&self, shape: [usize; 2], values: Vec<f64>, op: Op, requires_grad: bool) -> Tensor {
        debug_assert_eq!(values.len(), shape[0] * shape[1]);
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            shape,
            values,
            op,
            requires_grad,
            grad: None,
        });
        Tensor {
            tape: self.clone(),
            id,
        }
    }

    /// A differentiable input: gradients accumulate here on backward.
    pub fn leaf(&self, shape: [usize; 2], values: Vec<f64>) -> Tensor {
        assert_eq!(values.len(), shape[0] * shape[1], "leaf value length");
        self.push(shape, values, Op::Leaf, true)
    }

    /// A constant: participates in the forward pass only.
    pub fn constant(&self, shape: [usize; 2], values: Vec<f64>) -> Tensor {
        assert_eq!(values.len(), shape[0] * shape[1], "constant value length");
        self.push(shape, values, Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.constant([1, 1], vec![v])
    }

    pub fn zeros(&self, shape: [usize; 2]) -> Tensor {
        self.constant(shape, vec![0.0; shape[0] * shape[1]])
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True if any celu evaluated exactly at zero since the last reset.
    pub fn kink_hit(&self) -> bool {
        self.inner.borrow().kink_hit
    }

    /// Clears accumulated gradients and the consumed flag so the tape can
    /// run another backward pass.
    pub fn reset_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.consumed = false;
        for n in inner.nodes.iter_mut() {
            n.grad = None;
        }
    }
}

/// Handle to one tensor on a tape.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: usize,
}

fn matmul_raw(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * c..(i + 1) * c];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * c..(p + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    out
}

impl Tensor {
    pub fn tape(&self) -> Tape {
        self.tape.clone()
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.inner.borrow().nodes[self.id].shape
    }

    pub fn rows(&self) -> usize {
        self.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.shape()[1]
    }

    pub fn values(&self) -> Vec<f64> {
        self.tape.inner.borrow().nodes[self.id].values.clone()
    }

    pub fn value_at(&self, r: usize, c: usize) -> f64 {
        let inner = self.tape.inner.borrow();
        let n = &inner.nodes[self.id];
        n.values[r * n.shape[1] + c]
    }

    /// The single value of a `[1, 1]` tensor.
    pub fn scalar_value(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let n = &inner.nodes[self.id];
        assert_eq!(n.shape, [1, 1], "scalar_value on non-scalar");
        n.values[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    fn same_tape(&self, other: &Tensor) -> Result<()> {
        if Rc::ptr_eq(&self.tape.inner, &other.tape.inner) {
            Ok(())
        } else {
            Err(TensorError::TapeMixed)
        }
    }

    fn binary_same_shape(
        &self,
        rhs: &Tensor,
        opname: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Tensor> {
        self.same_tape(rhs)?;
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: opname,
                lhs: sa,
                rhs: sb,
            });
        }
        let vals = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].values;
            let b = &inner.nodes[rhs.id].values;
            a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
        };
        Ok(self.tape.push(sa, vals, op(self.id, rhs.id), false))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(rhs, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(rhs, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(rhs, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let vals = {
            let inner = self.tape.inner.borrow();
            inner.nodes[self.id].values.iter().map(|&v| v * c).collect()
        };
        self.tape.push(self.shape(), vals, Op::Scale(self.id, c), false)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let vals = {
            let inner = self.tape.inner.borrow();
            inner.nodes[self.id].values.iter().map(|&v| v + c).collect()
        };
        self.tape
            .push(self.shape(), vals, Op::AddScalar(self.id), false)
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_tape(rhs)?;
        let ([r, k], [k2, c]) = (self.shape(), rhs.shape());
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: [r, k],
                rhs: [k2, c],
            });
        }
        let vals = {
            let inner = self.tape.inner.borrow();
            matmul_raw(
                &inner.nodes[self.id].values,
                &inner.nodes[rhs.id].values,
                r,
                k,
                c,
            )
        };
        Ok(self.tape.push([r, c], vals, Op::Matmul(self.id, rhs.id), false))
    }

    pub fn transpose(&self) -> Tensor {
        let [r, c] = self.shape();
        let vals = {
            let inner = self.tape.inner.borrow();
            let v = &inner.nodes[self.id].values;
            let mut out = vec![0.0; r * c];
            for (i, row) in v.chunks_exact(c).enumerate() {
                for (j, &x) in row.iter().enumerate() {
                    out[j * r + i] = x;
                }
            }
            out
        };
        self.tape.push([c, r], vals, Op::Transpose(self.id), false)
    }

    /// `[r, c] + [1, c]` broadcast over rows.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        self.same_tape(bias)?;
        let ([r, c], sb) = (self.shape(), bias.shape());
        if sb != [1, c] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: [r, c],
                rhs: sb,
            });
        }
        let vals = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].values;
            let b = &inner.nodes[bias.id].values;
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    out.push(a[i * c + j] + b[j]);
                }
            }
            out
        };
        Ok(self
            .tape
            .push([r, c], vals, Op::AddBias(self.id, bias.id), false))
    }

    pub fn concat_cols(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_tape(rhs)?;
        let ([r, ca], [r2, cb]) = (self.shape(), rhs.shape());
        if r != r2 {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: [r, ca],
                rhs: [r2, cb],
            });
        }
        let vals = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].values;
            let b = &inner.nodes[rhs.id].values;
            let mut out = Vec::with_capacity(r * (ca + cb));
            for i in 0..r {
                out.extend_from_slice(&a[i * ca..(i + 1) * ca]);
                out.extend_from_slice(&b[i * cb..(i + 1) * cb]);
            }
            out
        };
        Ok(self
            .tape
            .push([r, ca + cb], vals, Op::ConcatCols(self.id, rhs.id), false))
    }

    pub fn slice_cols(&self, from: usize, to: usize) -> Result<Tensor> {
        let [r, c] = self.shape();
        if from >= to || to > c {
            return Err(TensorError::BadSlice { from, to, cols: c });
        }
        let w = to - from;
        let vals = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].values;
            let mut out = Vec::with_capacity(r * w);
            for i in 0..r {
                out.extend_from_slice(&a[i * c + from..i * c + to]);
            }
            out
        };
        Ok(self
            .tape
            .push([r, w], vals, Op::SliceCols(self.id, from, to), false))
    }

    pub fn sum_rows(&self) -> Tensor {
        let [r, c] = self.shape();
        let vals = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].values;
            let mut out = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    out[j] += a[i * c + j];
                }
            }
            out
        };
        self.tape.push([1, c], vals, Op::SumRows(self.id), false)
    }

    pub fn sum_cols(&self) -> Tensor {
        let [r, c] = self.shape();
        let vals = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].values;
            let mut out = Vec::with_capacity(r);
            for i in 0..r {
                let mut s = 0.0;
                for j in 0..c {
                    s += a[i * c + j];
                }
                out.push(s);
            }
            out
        };
        self.tape.push([r, 1], vals, Op::SumCols(self.id), false)
    }

    pub fn sum_all(&self) -> Tensor {
        self.sum_cols().sum_rows()
    }

    pub fn mean_all(&self) -> Tensor {
        let [r, c] = self.shape();
        self.sum_all().scale(1.0 / (r * c) as f64)
    }

    pub fn expand_rows(&self, r: usize) -> Result<Tensor> {
        let [r0, c] = self.shape();
        if r0 != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "expand_rows",
                lhs: [r0, c],
                rhs: [1, c],
            });
        }
        let vals = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].values;
            let mut out = Vec::with_capacity(r * c);
            for _ in 0..r {
                out.extend_from_slice(a);
            }
            out
        };
        Ok(self.tape.push([r, c], vals, Op::ExpandRows(self.id), false))
    }

    pub fn expand_cols(&self, c: usize) -> Result<Tensor> {
        let [r, c0] = self.shape();
        if c0 != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "expand_cols",
                lhs: [r, c0],
                rhs: [r, 1],
            });
        }
        let vals = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].values;
            let mut out = Vec::with_capacity(r * c);
            for &v in a.iter() {
                for _ in 0..c {
                    out.push(v);
                }
            }
            out
        };
        Ok(self.tape.push([r, c], vals, Op::ExpandCols(self.id), false))
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let [r, c] = self.shape();
        for &i in idx {
            if i >= r {
                return Err(TensorError::BadIndex { idx: i, rows: r });
            }
        }
        let vals = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].values;
            let mut out = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                out.extend_from_slice(&a[i * c..(i + 1) * c]);
            }
            out
        };
        Ok(self.tape.push(
            [idx.len(), c],
            vals,
            Op::GatherRows(self.id, Rc::new(idx.to_vec())),
            false,
        ))
    }

    pub fn scatter_add_rows(&self, idx: &[usize], out_rows: usize) -> Result<Tensor> {
        let [r, c] = self.shape();
        if idx.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: [r, c],
                rhs: [idx.len(), c],
            });
        }
        for &i in idx {
            if i >= out_rows {
                return Err(TensorError::BadIndex {
                    idx: i,
                    rows: out_rows,
                });
            }
        }
        let vals = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].values;
            let mut out = vec![0.0; out_rows * c];
            for (k, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    out[i * c + j] += a[k * c + j];
                }
            }
            out
        };
        Ok(self.tape.push(
            [out_rows, c],
            vals,
            Op::ScatterAddRows(self.id, Rc::new(idx.to_vec())),
            false,
        ))
    }

    pub fn celu(&self, alpha: f64) -> Tensor {
        assert!(alpha > 0.0, "celu alpha must be positive");
        let (vals, kink) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].values;
            let mut kink = false;
            let out = a
                .iter()
                .map(|&x| {
                    if x == 0.0 {
                        kink = true;
                    }
                    if x >= 0.0 {
                        x
                    } else {
                        alpha * ((x / alpha).exp() - 1.0)
                    }
                })
                .collect();
            (out, kink)
        };
        if kink {
            self.tape.inner.borrow_mut().kink_hit = true;
        }
        self.tape
            .push(self.shape(), vals, Op::Celu(self.id, alpha), false)
    }

    fn celu_grad(&self, alpha: f64) -> Tensor {
        let (vals, kink) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].values;
            let mut kink = false;
            let out = a
                .iter()
                .map(|&x| {
                    if x == 0.0 {
                        kink = true;
                    }
                    if x >= 0.0 {
                        1.0
                    } else {
                        (x / alpha).exp()
                    }
                })
                .collect();
            (out, kink)
        };
        if kink {
            self.tape.inner.borrow_mut().kink_hit = true;
        }
        self.tape
            .push(self.shape(), vals, Op::CeluGrad(self.id, alpha), false)
    }

    pub fn sigmoid(&self) -> Tensor {
        let vals = {
            let inner = self.tape.inner.borrow();
            inner.nodes[self.id]
                .values
                .iter()
                .map(|&x| 1.0 / (1.0 + (-x).exp()))
                .collect()
        };
        self.tape
            .push(self.shape(), vals, Op::Sigmoid(self.id), false)
    }

    /// Row-wise softmax over the last axis, with the usual max-shift for
    /// numerical stability.
    pub fn softmax_cols(&self) -> Tensor {
        let [r, c] = self.shape();
        let vals = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].values;
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                let row = &a[i * c..(i + 1) * c];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
                let s: f64 = exps.iter().sum();
                out.extend(exps.iter().map(|&e| e / s));
            }
            out
        };
        self.tape
            .push([r, c], vals, Op::SoftmaxCols(self.id), false)
    }

    pub fn sqrt(&self) -> Tensor {
        let vals = {
            let inner = self.tape.inner.borrow();
            inner.nodes[self.id].values.iter().map(|&x| x.sqrt()).collect()
        };
        self.tape.push(self.shape(), vals, Op::Sqrt(self.id), false)
    }

    pub fn recip(&self) -> Tensor {
        let vals = {
            let inner = self.tape.inner.borrow();
            inner.nodes[self.id].values.iter().map(|&x| 1.0 / x).collect()
        };
        self.tape.push(self.shape(), vals, Op::Recip(self.id), false)
    }

    /// Forward value passes through; backward stops here.
    pub fn detach(&self) -> Tensor {
        let vals = self.values();
        self.tape
            .push(self.shape(), vals, Op::Detach, false)
    }

    /// Builds gradient tensors of a scalar `self` with respect to `wrt` as
    /// new tape nodes. The returned tensors are ordinary tensors, so the
    /// result can feed further computation (double backward).
    pub fn grad_tensors(&self, wrt: &[&Tensor]) -> Result<Vec<Tensor>> {
        if self.shape() != [1, 1] {
            return Err(TensorError::NonScalarRoot(self.shape()));
        }
        for t in wrt {
            self.same_tape(t)?;
        }
        let mut grad_of: Vec<Option<Tensor>> = vec![None; self.id + 1];
        grad_of[self.id] = Some(self.tape.constant([1, 1], vec![1.0]));

        for id in (0..=self.id).rev() {
            let Some(g) = grad_of[id].clone() else {
                continue;
            };
            let op = self.tape.inner.borrow().nodes[id].op.clone();
            let acc = |slot: &mut Option<Tensor>, add: Tensor| -> Result<()> {
                *slot = Some(match slot.take() {
                    None => add,
                    Some(prev) => prev.add(&add)?,
                });
                Ok(())
            };
            match op {
                Op::Leaf | Op::Detach => {}
                Op::Matmul(a, b) => {
                    let ta = Tensor { tape: self.tape.clone(), id: a };
                    let tb = Tensor { tape: self.tape.clone(), id: b };
                    let ga = g.matmul(&tb.transpose())?;
                    let gb = ta.transpose().matmul(&g)?;
                    acc(&mut grad_of[a], ga)?;
                    acc(&mut grad_of[b], gb)?;
                }
                Op::Transpose(a) => acc(&mut grad_of[a], g.transpose())?,
                Op::Add(a, b) => {
                    acc(&mut grad_of[a], g.clone())?;
                    acc(&mut grad_of[b], g)?;
                }
                Op::Sub(a, b) => {
                    acc(&mut grad_of[a], g.clone())?;
                    acc(&mut grad_of[b], g.scale(-1.0))?;
                }
                Op::Mul(a, b) => {
                    let ta = Tensor { tape: self.tape.clone(), id: a };
                    let tb = Tensor { tape: self.tape.clone(), id: b };
                    acc(&mut grad_of[a], g.mul(&tb)?)?;
                    acc(&mut grad_of[b], g.mul(&ta)?)?;
                }
                Op::Scale(a, c) => acc(&mut grad_of[a], g.scale(c))?,
                Op::AddScalar(a) => acc(&mut grad_of[a], g)?,
                Op::AddBias(a, b) => {
                    acc(&mut grad_of[a], g.clone())?;
                    acc(&mut grad_of[b], g.sum_rows())?;
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.tape.inner.borrow().nodes[a].shape[1];
                    let cb = self.tape.inner.borrow().nodes[b].shape[1];
                    acc(&mut grad_of[a], g.slice_cols(0, ca)?)?;
                    acc(&mut grad_of[b], g.slice_cols(ca, ca + cb)?)?;
                }
                Op::SliceCols(a, from, to) => {
                    let [r, c] = self.tape.inner.borrow().nodes[a].shape;
                    let mut parts: Vec<Tensor> = Vec::new();
                    if from > 0 {
                        parts.push(self.tape.zeros([r, from]));
                    }
                    parts.push(g);
                    if to < c {
                        parts.push(self.tape.zeros([r, c - to]));
                    }
                    let mut whole = parts[0].clone();
                    for p in &parts[1..] {
                        whole = whole.concat_cols(p)?;
                    }
                    acc(&mut grad_of[a], whole)?;
                }
                Op::SumRows(a) => {
                    let r = self.tape.inner.borrow().nodes[a].shape[0];
                    acc(&mut grad_of[a], g.expand_rows(r)?)?;
                }
                Op::SumCols(a) => {
                    let c = self.tape.inner.borrow().nodes[a].shape[1];
                    acc(&mut grad_of[a], g.expand_cols(c)?)?;
                }
                Op::ExpandRows(a) => acc(&mut grad_of[a], g.sum_rows())?,
                Op::ExpandCols(a) => acc(&mut grad_of[a], g.sum_cols())?,
                Op::GatherRows(a, idx) => {
                    let r = self.tape.inner.borrow().nodes[a].shape[0];
                    acc(&mut grad_of[a], g.scatter_add_rows(&idx, r)?)?;
                }
                Op::ScatterAddRows(a, idx) => {
                    acc(&mut grad_of[a], g.gather_rows(&idx)?)?;
                }
                Op::Celu(a, alpha) => {
                    let ta = Tensor { tape: self.tape.clone(), id: a };
                    acc(&mut grad_of[a], g.mul(&ta.celu_grad(alpha))?)?;
                }
                Op::CeluGrad(a, alpha) => {
                    // d/dx celu'(x) = exp(x/alpha)/alpha for x < 0, else 0.
                    // The negative-side factor is celu'(x)/alpha; the mask is
                    // constant with respect to x.
                    let (mask, out_id) = {
                        let inner = self.tape.inner.borrow();
                        let xs = &inner.nodes[a].values;
                        let m: Vec<f64> = xs
                            .iter()
                            .map(|&x| if x < 0.0 { 1.0 / alpha } else { 0.0 })
                            .collect();
                        (m, id)
                    };
                    let shape = self.tape.inner.borrow().nodes[a].shape;
                    let mask_c = self.tape.constant(shape, mask);
                    let out = Tensor { tape: self.tape.clone(), id: out_id };
                    acc(&mut grad_of[a], g.mul(&out)?.mul(&mask_c)?)?;
                }
                Op::Sigmoid(a) => {
                    let y = Tensor { tape: self.tape.clone(), id };
                    let one_minus = y.scale(-1.0).add_scalar(1.0);
                    acc(&mut grad_of[a], g.mul(&y)?.mul(&one_minus)?)?;
                }
                Op::SoftmaxCols(a) => {
                    let y = Tensor { tape: self.tape.clone(), id };
                    let gy = g.mul(&y)?;
                    let dot = gy.sum_cols().expand_cols(y.cols())?;
                    acc(&mut grad_of[a], g.sub(&dot)?.mul(&y)?)?;
                }
                Op::Sqrt(a) => {
                    let y = Tensor { tape: self.tape.clone(), id };
                    acc(&mut grad_of[a], g.mul(&y.recip())?.scale(0.5))?;
                }
                Op::Recip(a) => {
                    let y = Tensor { tape: self.tape.clone(), id };
                    acc(&mut grad_of[a], g.mul(&y)?.mul(&y)?.scale(-1.0))?;
                }
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for t in wrt {
            out.push(match grad_of.get(t.id).and_then(|g| g.clone()) {
                Some(g) => g,
                None => self.tape.zeros(t.shape()),
            });
        }
        Ok(out)
    }

    /// End-user backward: fills the `grad` slot of every tracked tensor with
    /// d(self)/d(tensor). One pass per tape until [`Tape::reset_grads`].
    pub fn backward(&self) -> Result<()> {
        if self.shape() != [1, 1] {
            return Err(TensorError::NonScalarRoot(self.shape()));
        }
        if self.tape.inner.borrow().consumed {
            return Err(TensorError::TapeConsumed);
        }
        let tracked: Vec<usize> = {
            let inner = self.tape.inner.borrow();
            (0..=self.id)
                .filter(|&i| inner.nodes[i].requires_grad)
                .collect()
        };
        let handles: Vec<Tensor> = tracked
            .iter()
            .map(|&id| Tensor { tape: self.tape.clone(), id })
            .collect();
        let refs: Vec<&Tensor> = handles.iter().collect();
        let grads = self.grad_tensors(&refs)?;
        let mut inner = self.tape.inner.borrow_mut();
        for (h, g) in tracked.iter().zip(grads.iter()) {
            let v = inner.nodes[g.id].values.clone();
            inner.nodes[*h].grad = Some(v);
        }
        inner.consumed = true;
        Ok(())
    }
}

/// Per-coordinate outcome of [`gradient_check`].
#[derive(Debug)]
pub struct GradCheckReport {
    /// Max of |analytic − numeric| / max(1, |analytic|, |numeric|) over
    /// checked coordinates.
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because an evaluation sat exactly on a celu kink.
    pub skipped_non_smooth: Vec<usize>,
}

/// Central-difference check of reverse-mode gradients for a scalar function.
///
/// `f` is evaluated on a fresh tape per call; coordinates whose base or
/// perturbed evaluations hit a celu kink are reported in
/// `skipped_non_smooth` rather than checked.
pub fn gradient_check(
    f: impl Fn(&Tape, &Tensor) -> Tensor,
    x_shape: [usize; 2],
    x_values: &[f64],
    step: f64,
) -> GradCheckReport {
    assert!(step > 0.0, "step must be positive");
    let eval = |vals: &[f64]| -> (f64, bool) {
        let tape = Tape::new();
        let x = tape.constant(x_shape, vals.to_vec());
        let y = f(&tape, &x);
        (y.scalar_value(), tape.kink_hit())
    };

    let tape = Tape::new();
    let x = tape.leaf(x_shape, x_values.to_vec());
    let y = f(&tape, &x);
    y.backward().expect("gradient_check root must be scalar");
    let base_kink = tape.kink_hit();
    let analytic = x.grad().expect("leaf gradient");

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = Vec::new();
    for i in 0..x_values.len() {
        let mut plus = x_values.to_vec();
        plus[i] += step;
        let mut minus = x_values.to_vec();
        minus[i] -= step;
        let (fp, kp) = eval(&plus);
        let (fm, km) = eval(&minus);
        if base_kink || kp || km {
            skipped.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    GradCheckReport {
        max_rel_err: max_rel,
        checked,
        skipped_non_smooth: skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng_vals(n: usize, seed: u64) -> Vec<f64> {
        // Small deterministic pseudo-random values for oracles.
        let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                ((s % 2000) as f64 / 1000.0) - 1.0
            })
            .collect()
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn matmul_matches_naive_triple_loop() {
        let a = rng_vals(12, 1);
        let b = rng_vals(8, 2);
        let tape = Tape::new();
        let ta = tape.constant([3, 4], a.clone());
        let tb = tape.constant([4, 2], b.clone());
        let c = ta.matmul(&tb).unwrap();
        let mut expect = [0.0; 6];
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..4 {
                    expect[i * 2 + j] += a[i * 4 + k] * b[k * 2 + j];
                }
            }
        }
        let got = c.values();
        for (g, e) in got.iter().zip(expect.iter()) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn celu_fixes_origin_and_known_points() {
        let tape = Tape::new();
        let x = tape.constant([1, 3], vec![0.0, 1.5, -1.0]);
        let y = x.celu(1.0);
        let v = y.values();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 1.5);
        assert!((v[2] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!(tape.kink_hit());
    }

    #[test]
    fn reduce_sum_of_ones_and_gradient() {
        let tape = Tape::new();
        let x = tape.leaf([1, 5], vec![1.0; 5]);
        let s = x.sum_all();
        assert_eq!(s.scalar_value(), 5.0);
        s.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn backward_of_sum_is_ones_and_dot_is_2x() {
        let tape = Tape::new();
        let vals = vec![0.5, -1.25, 2.0];
        let x = tape.leaf([1, 3], vals.clone());
        let dot = x.mul(&x).unwrap().sum_all();
        dot.backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, xi) in g.iter().zip(vals.iter()) {
            assert!((gi - 2.0 * xi).abs() < 1e-15);
        }
    }

    #[test]
    fn second_backward_without_reset_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf([1, 2], vec![1.0, 2.0]);
        let y = x.sum_all();
        y.backward().unwrap();
        assert_eq!(y.backward(), Err(TensorError::TapeConsumed));
        tape.reset_grads();
        y.backward().unwrap();
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let x = tape.leaf([2, 2], vec![1.0; 4]);
        assert!(matches!(
            x.backward(),
            Err(TensorError::NonScalarRoot([2, 2]))
        ));
    }

    #[test]
    fn gradient_check_linear_is_exact() {
        let rep = gradient_check(
            |_t, x| x.sum_all(),
            [1, 4],
            &[0.3, -0.7, 1.1, 0.0],
            1e-5,
        );
        assert!(rep.max_rel_err < 1e-10, "{rep:?}");
        assert_eq!(rep.checked, 4);
    }

    #[test]
    fn gradient_check_celu_composition_away_from_zero() {
        let vals = rng_vals(6, 7).iter().map(|v| v + 2.5).collect::<Vec<_>>();
        let rep = gradient_check(
            |_t, x| x.celu(1.0).mul(x).unwrap().sum_all(),
            [2, 3],
            &vals,
            1e-5,
        );
        assert!(rep.max_rel_err < 1e-6, "{rep:?}");
    }

    #[test]
    fn gradient_check_flags_celu_kink() {
        let rep = gradient_check(
            |_t, x| x.celu(1.0).sum_all(),
            [1, 3],
            &[0.0, 1.0, -1.0],
            1e-5,
        );
        // Base evaluation hits the kink, so every coordinate is skipped.
        assert_eq!(rep.checked, 0);
        assert_eq!(rep.skipped_non_smooth, [0, 1, 2]);
    }

    type ScalarFn = Box<dyn Fn(&Tape, &Tensor) -> Tensor>;

    #[test]
    fn gradient_check_all_primitives_at_random_points() {
        let step = 1e-5;
        let cases: Vec<(&str, ScalarFn)> = vec![
            ("matmul", Box::new(|t: &Tape, x: &Tensor| {
                let w = t.constant([3, 2], rng_vals(6, 11));
                x.matmul(&w).unwrap().mul(&x.matmul(&w).unwrap()).unwrap().sum_all()
            })),
            ("add_sub", Box::new(|t: &Tape, x: &Tensor| {
                let c = t.constant([2, 3], rng_vals(6, 12));
                x.add(&c).unwrap().sub(&x.mul(&c).unwrap()).unwrap().sum_all()
            })),
            ("concat_slice", Box::new(|_t, x: &Tensor| {
                let y = x.concat_cols(x).unwrap();
                y.slice_cols(1, 4).unwrap().mul(&y.slice_cols(2, 5).unwrap()).unwrap().sum_all()
            })),
            ("softmax", Box::new(|t: &Tape, x: &Tensor| {
                let w = t.constant([2, 3], rng_vals(6, 13));
                x.softmax_cols().mul(&w).unwrap().sum_all()
            })),
            ("sigmoid", Box::new(|_t, x: &Tensor| x.sigmoid().mul(x).unwrap().sum_all())),
            ("celu", Box::new(|_t, x: &Tensor| x.celu(1.0).sum_all())),
            ("sum_expand", Box::new(|_t, x: &Tensor| {
                x.sum_cols().expand_cols(3).unwrap().mul(x).unwrap().sum_all()
            })),
            ("bias", Box::new(|t: &Tape, x: &Tensor| {
                let b = t.constant([1, 3], rng_vals(3, 14));
                x.add_bias(&b).unwrap().mul(x).unwrap().sum_all()
            })),
            ("gather_scatter", Box::new(|_t, x: &Tensor| {
                let g = x.gather_rows(&[1, 0, 1, 1]).unwrap();
                g.scatter_add_rows(&[0, 1, 1, 0], 2).unwrap().mul(x).unwrap().sum_all()
            })),
            ("transpose", Box::new(|t: &Tape, x: &Tensor| {
                let w = t.constant([2, 2], rng_vals(4, 15));
                x.transpose().matmul(&w).unwrap().sum_all()
            })),
            ("sqrt_recip", Box::new(|_t, x: &Tensor| {
                x.mul(x).unwrap().add_scalar(1.0).sqrt().recip().sum_all()
            })),
            ("mean_scale", Box::new(|_t, x: &Tensor| x.scale(3.0).add_scalar(0.5).mean_all())),
        ];
        for (name, f) in cases {
            // Offset keeps celu away from its kink.
            let vals: Vec<f64> = rng_vals(6, 21).iter().map(|v| v + 0.05).collect();
            let rep = gradient_check(f.as_ref(), [2, 3], &vals, step);
            assert!(
                rep.max_rel_err < 1e-4,
                "primitive {name}: {rep:?}"
            );
            assert!(rep.checked > 0, "primitive {name} checked nothing");
        }
    }

    #[test]
    fn double_backward_matches_finite_difference_of_gradient_norm() {
        // L(x) = ||d f/d x||^2 with f = sum(celu(x W)); checks the
        // grad-of-grad path used by the gradient penalty.
        let w_vals = rng_vals(6, 31);
        let f = |tape: &Tape, x: &Tensor| -> Tensor {
            let w = tape.constant([3, 2], w_vals.clone());
            let y = x.matmul(&w).unwrap().celu(1.0).sum_all();
            let g = y.grad_tensors(&[x]).unwrap().remove(0);
            g.mul(&g).unwrap().sum_all()
        };
        let vals: Vec<f64> = rng_vals(3, 32).iter().map(|v| v + 1.5).collect();
        let rep = gradient_check(f, [1, 3], &vals, 1e-5);
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
        assert!(rep.checked > 0);
    }

    #[test]
    fn determinism_bit_identical_forward() {
        let run = || {
            let tape = Tape::new();
            let x = tape.constant([3, 3], rng_vals(9, 41));
            let w = tape.constant([3, 3], rng_vals(9, 42));
            x.matmul(&w).unwrap().celu(1.0).softmax_cols().sum_all().scalar_value()
        };
        let a = run();
        let b = run();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
