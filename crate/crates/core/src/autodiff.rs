//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Values are
//! addressed by [`Var`] handles; because a handle can only refer to an earlier
//! entry, insertion order is a topological order and the graph is acyclic.
//!
//! ```
//! use grail_core::autodiff::Tape;
//! use grail_core::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap().item(), 6.0);
//! ```

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt_into, matmul_tn_into, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
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
    AddRow(Var, Var),
    Mul(Var, Var),
    MulColumn(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    SliceRows(Var, usize),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    Mask(Var, Tensor),
    Hinge(Var),
    Floor(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Dynamically built computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    signature: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            signature: FNV_OFFSET,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable input; gradients accumulate into it on [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Hash of the on/off pattern of every relu, hinge and floor recorded so
    /// far. Two evaluations with equal signatures lie on the same linear piece.
    pub fn activation_signature(&self) -> u64 {
        self.signature
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record_pattern(&mut self, on: impl Iterator<Item = bool>) {
        let mut h = self.signature;
        for bit in on {
            h ^= bit as u64 + 1;
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.signature = h;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.matmul(vb)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum. `b` may also be a `1 x n` row added to every row of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let rg = self.any_grad(&[a, b]);
        if sa == sb {
            let mut out = self.value(a).clone();
            out.add_assign(self.value(b));
            Ok(self.push(out, Op::Add(a, b), rg))
        } else if sb.0 == 1 && sb.1 == sa.1 {
            let mut out = self.value(a).clone();
            let row = self.value(b).data().to_vec();
            for chunk in out.data_mut().chunks_mut(sa.1.max(1)) {
                for (o, r) in chunk.iter_mut().zip(&row) {
                    *o += r;
                }
            }
            Ok(self.push(out, Op::AddRow(a, b), rg))
        } else {
            Err(Error::ShapeMismatch {
                op: "add",
                lhs: sa,
                rhs: sb,
            })
        }
    }

    /// Elementwise product. `b` may also be an `n x 1` column scaling each row of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let rg = self.any_grad(&[a, b]);
        if sa == sb {
            let data = self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x * y)
                .collect();
            let out = Tensor::from_vec(sa.0, sa.1, data)?;
            Ok(self.push(out, Op::Mul(a, b), rg))
        } else if sb.1 == 1 && sb.0 == sa.0 {
            let mut out = self.value(a).clone();
            let col = self.value(b).data().to_vec();
            for (chunk, s) in out.data_mut().chunks_mut(sa.1.max(1)).zip(&col) {
                chunk.iter_mut().for_each(|x| *x *= s);
            }
            Ok(self.push(out, Op::MulColumn(a, b), rg))
        } else {
            Err(Error::ShapeMismatch {
                op: "mul",
                lhs: sa,
                rhs: sb,
            })
        }
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let pattern: Vec<bool> = self.value(a).data().iter().map(|&x| x > 0.0).collect();
        self.record_pattern(pattern.into_iter());
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// `max(0, x)` elementwise; the margin-loss kink.
    pub fn hinge(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let pattern: Vec<bool> = self.value(a).data().iter().map(|&x| x > 0.0).collect();
        self.record_pattern(pattern.into_iter());
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Hinge(a), rg)
    }

    /// Replaces entries strictly below `floor` with exact zeros.
    pub fn floor_to_zero(&mut self, a: Var, floor: f64) -> Var {
        let keep = self.value(a).map(|x| if x < floor { 0.0 } else { 1.0 });
        self.record_pattern(keep.data().iter().map(|&k| k > 0.0));
        let out = self.value(a).map(|x| if x < floor { 0.0 } else { x });
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Floor(a, keep), rg)
    }

    /// Concatenation along the last axis; all parts share a row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".to_string()))?;
        let rows = self.shape(*first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(*first),
                    rhs: s,
                });
            }
            cols += s.1;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Column means, giving a `1 x n` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if rows == 0 {
            return Err(Error::ShapeMismatch {
                op: "mean_rows",
                lhs: (rows, cols),
                rhs: (1, cols),
            });
        }
        let mut out = Tensor::zeros(1, cols);
        for r in 0..rows {
            for (o, x) in out.data_mut().iter_mut().zip(self.value(a).row_slice(r)) {
                *o += x;
            }
        }
        out.scale_in_place(1.0 / rows as f64);
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::MeanRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start + len > rows {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: (rows, cols),
                rhs: (start + len, cols),
            });
        }
        let data = self.value(a).data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::from_vec(len, cols, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let src = self.value(a);
        if src.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: src.shape(),
                rhs: (rows, cols),
            });
        }
        let out = Tensor::from_vec(rows, cols, src.data().to_vec())?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Row `i` of the output is row `index[i]` of `a`. Equivalent to a matmul
    /// with a one-hot selection matrix.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(Error::ShapeMismatch {
                    op: "gather_rows",
                    lhs: (rows, cols),
                    rhs: (i + 1, cols),
                });
            }
            data.extend_from_slice(self.value(a).row_slice(i));
        }
        let out = Tensor::from_vec(index.len(), cols, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Gather(a, index.to_vec()), rg))
    }

    /// Adds row `i` of `a` into row `index[i]` of a zero `out_rows x n` matrix.
    /// The transpose of [`Tape::gather_rows`].
    pub fn scatter_add_rows(&mut self, a: Var, index: &[usize], out_rows: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if index.len() != rows || index.iter().any(|&i| i >= out_rows) {
            return Err(Error::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: (rows, cols),
                rhs: (out_rows, cols),
            });
        }
        let mut out = Tensor::zeros(out_rows, cols);
        for (r, &dst) in index.iter().enumerate() {
            let src = self.value(a).row_slice(r);
            let row = &mut out.data_mut()[dst * cols..(dst + 1) * cols];
            for (o, x) in row.iter_mut().zip(src) {
                *o += x;
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::ScatterAdd(a, index.to_vec()), rg))
    }

    /// Multiplies by an externally supplied 0/1 mask of the same shape, or an
    /// `n x 1` column mask applied per row.
    pub fn apply_mask(&mut self, a: Var, mask: &Tensor) -> Result<Var> {
        let sa = self.shape(a);
        let full = if mask.shape() == sa {
            mask.clone()
        } else if mask.cols() == 1 && mask.rows() == sa.0 {
            let mut m = Tensor::zeros(sa.0, sa.1);
            for r in 0..sa.0 {
                let keep = mask.get(r, 0);
                m.data_mut()[r * sa.1..(r + 1) * sa.1]
                    .iter_mut()
                    .for_each(|x| *x = keep);
            }
            m
        } else {
            return Err(Error::ShapeMismatch {
                op: "apply_mask",
                lhs: sa,
                rhs: mask.shape(),
            });
        };
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(full.data())
            .map(|(x, m)| x * m)
            .collect();
        let out = Tensor::from_vec(sa.0, sa.1, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Mask(a, full), rg))
    }

    /// Populates gradients of every trainable leaf with d(root)/d(leaf).
    /// Calling it again without [`Tape::zero_grad`] accumulates.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(Error::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let acc = slot(grads, *a, va.shape());
                    matmul_nt_into(g, vb, acc);
                }
                if self.requires_grad(*b) {
                    let acc = slot(grads, *b, vb.shape());
                    matmul_tn_into(va, g, acc);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.requires_grad(v) {
                        slot(grads, v, g.shape()).add_assign(g);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if self.requires_grad(*a) {
                    slot(grads, *a, g.shape()).add_assign(g);
                }
                if self.requires_grad(*b) {
                    let cols = g.cols();
                    let acc = slot(grads, *b, (1, cols));
                    for r in 0..g.rows() {
                        for (o, x) in acc.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let acc = slot(grads, *a, va.shape());
                    for ((o, gx), y) in acc.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *o += gx * y;
                    }
                }
                if self.requires_grad(*b) {
                    let acc = slot(grads, *b, vb.shape());
                    for ((o, gx), x) in acc.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *o += gx * x;
                    }
                }
            }
            Op::MulColumn(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let cols = va.cols();
                if self.requires_grad(*a) {
                    let acc = slot(grads, *a, va.shape());
                    for r in 0..va.rows() {
                        let s = vb.get(r, 0);
                        let row = &mut acc.data_mut()[r * cols..(r + 1) * cols];
                        for (o, gx) in row.iter_mut().zip(g.row_slice(r)) {
                            *o += gx * s;
                        }
                    }
                }
                if self.requires_grad(*b) {
                    let acc = slot(grads, *b, vb.shape());
                    for r in 0..va.rows() {
                        let dot: f64 = g.row_slice(r).iter().zip(va.row_slice(r)).map(|(x, y)| x * y).sum();
                        acc.data_mut()[r] += dot;
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.requires_grad(*a) {
                    let acc = slot(grads, *a, g.shape());
                    for (o, gx) in acc.data_mut().iter_mut().zip(g.data()) {
                        *o += gx * s;
                    }
                }
            }
            Op::Relu(a) | Op::Hinge(a) => {
                if self.requires_grad(*a) {
                    let va = self.value(*a);
                    let acc = slot(grads, *a, g.shape());
                    for ((o, gx), x) in acc.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        if *x > 0.0 {
                            *o += gx;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.requires_grad(*a) {
                    let out = &node.value;
                    let acc = slot(grads, *a, g.shape());
                    for ((o, gx), y) in acc.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *o += gx * y * (1.0 - y);
                    }
                }
            }
            Op::Floor(a, keep) | Op::Mask(a, keep) => {
                if self.requires_grad(*a) {
                    let acc = slot(grads, *a, g.shape());
                    for ((o, gx), k) in acc.data_mut().iter_mut().zip(g.data()).zip(keep.data()) {
                        *o += gx * k;
                    }
                }
            }
            Op::Concat(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let (prow, pcol) = self.shape(p);
                    if self.requires_grad(p) {
                        let acc = slot(grads, p, (prow, pcol));
                        for r in 0..prow {
                            let src = &g.data()[r * cols + offset..r * cols + offset + pcol];
                            for (o, x) in acc.data_mut()[r * pcol..(r + 1) * pcol].iter_mut().zip(src) {
                                *o += x;
                            }
                        }
                    }
                    offset += pcol;
                }
            }
            Op::MeanRows(a) => {
                if self.requires_grad(*a) {
                    let (rows, cols) = self.shape(*a);
                    let inv = 1.0 / rows as f64;
                    let acc = slot(grads, *a, (rows, cols));
                    for r in 0..rows {
                        for (o, gx) in acc.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(g.data()) {
                            *o += gx * inv;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if self.requires_grad(*a) {
                    let gx = g.item();
                    let acc = slot(grads, *a, self.shape(*a));
                    acc.data_mut().iter_mut().for_each(|o| *o += gx);
                }
            }
            Op::SliceRows(a, start) => {
                if self.requires_grad(*a) {
                    let (rows, cols) = self.shape(*a);
                    let acc = slot(grads, *a, (rows, cols));
                    let dst = &mut acc.data_mut()[start * cols..start * cols + g.len()];
                    for (o, gx) in dst.iter_mut().zip(g.data()) {
                        *o += gx;
                    }
                }
            }
            Op::Reshape(a) => {
                if self.requires_grad(*a) {
                    let acc = slot(grads, *a, self.shape(*a));
                    for (o, gx) in acc.data_mut().iter_mut().zip(g.data()) {
                        *o += gx;
                    }
                }
            }
            Op::Gather(a, index) => {
                if self.requires_grad(*a) {
                    let (rows, cols) = self.shape(*a);
                    let acc = slot(grads, *a, (rows, cols));
                    for (r, &src) in index.iter().enumerate() {
                        let dst = &mut acc.data_mut()[src * cols..(src + 1) * cols];
                        for (o, gx) in dst.iter_mut().zip(g.row_slice(r)) {
                            *o += gx;
                        }
                    }
                }
            }
            Op::ScatterAdd(a, index) => {
                if self.requires_grad(*a) {
                    let (rows, cols) = self.shape(*a);
                    let acc = slot(grads, *a, (rows, cols));
                    for (r, &dst) in index.iter().enumerate() {
                        let out = &mut acc.data_mut()[r * cols..(r + 1) * cols];
                        for (o, gx) in out.iter_mut().zip(g.row_slice(dst)) {
                            *o += gx;
                        }
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Tensor>], v: Var, shape: (usize, usize)) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Options for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub eps: f64,
    /// Check at most this many coordinates per parameter tensor (evenly strided).
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords_per_param: None,
        }
    }
}

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose central difference straddles a relu/hinge kink.
    pub skipped: usize,
}

/// Compares tape gradients of `f` against central finite differences.
///
/// `f` receives a fresh tape plus one leaf per parameter (in order) and
/// returns a scalar. The relative error of a coordinate is
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`. Coordinates
/// whose `+eps` or `-eps` evaluation changes the activation pattern of any
/// relu/hinge are skipped and counted.
pub fn grad_check<F>(f: F, params: &[Tensor], opts: GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if opts.eps <= 0.0 || !opts.eps.is_finite() {
        return Err(Error::InvalidArgument("grad_check step must be positive".to_string()));
    }
    let eval = |ps: &[Tensor]| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective".to_string()));
        }
        Ok((v, tape.activation_signature()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    if !tape.value(root).is_finite() {
        return Err(Error::NonFinite("grad_check objective".to_string()));
    }
    let base_sig = tape.activation_signature();
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
        })
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        let n = p.len();
        let stride = match opts.max_coords_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for c in (0..n).step_by(stride) {
            let orig = p.data()[c];
            work[pi].data_mut()[c] = orig + opts.eps;
            let (plus, sig_plus) = eval(&work)?;
            work[pi].data_mut()[c] = orig - opts.eps;
            let (minus, sig_minus) = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            if sig_plus != base_sig || sig_minus != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[pi].data()[c];
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::NonFinite("grad_check gradient".to_string()));
            }
            let denom = (a.abs() + numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
