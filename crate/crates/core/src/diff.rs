//! Batched reverse-mode differentiation.
//!
//! A [`Tape`] records a single scalar-valued evaluation as a list of nodes,
//! each holding a row-major 2-D value (`rows × cols`, a batch of row vectors).
//! Leaves are either constants or parameters; [`Tape::backward`] returns the
//! gradient of a `1×1` root with respect to every parameter leaf.
//!
//! The operator set is deliberately small: what multilayer perceptrons, the
//! planar arm kinematics, spline sampling and the motion-policy least-squares
//! fusion need, nothing more. Each backward rule is checked against central
//! finite differences in the tests below.
//!
//! A tape is single-use and single-threaded; build one per evaluation.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::linalg::{gemm, pinv_sym_solve, Matrix};
use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("backward root must be 1x1, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: &'static str },
    #[error("layer {layer}: input has {got} entries, layer expects {expected}")]
    LayerInput { layer: usize, expected: usize, got: usize },
    #[error("layer {layer}: weight is {out}x{inp} but previous layer produces {prev}")]
    LayerChain { layer: usize, out: usize, inp: usize, prev: usize },
    #[error("parameter {tensor}[{index}] is not finite")]
    NonFinite { tensor: usize, index: usize },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("loss is not finite at perturbed parameter {tensor}[{index}]")]
    NonFiniteLoss { tensor: usize, index: usize },
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One subtask's inputs to [`Tape::rmp_fuse`].
#[derive(Clone, Copy, Debug)]
pub struct FuseTerm {
    /// Subtask-space acceleration, `B×n`.
    pub accel: Var,
    /// Lower-triangular Cholesky entries in row-major order, `B×n(n+1)/2`.
    pub chol: Var,
    /// Row-major Jacobian, `B×(n·d)`.
    pub jac: Var,
    /// Curvature term `J̇q̇`, `B×n`.
    pub curv: Var,
    pub dim: usize,
}

#[derive(Debug)]
struct FuseOp {
    terms: Vec<FuseTerm>,
    dof: usize,
    diag_offset: f64,
    rel_cutoff: f64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `x Wᵀ + b`
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Elu(Var),
    Tanh(Var),
    Sin(Var),
    Cos(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    SumAll(Var),
    RmpFuse(Box<FuseOp>),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recorded evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if `v` does not influence the root.
    pub fn get(&self, v: Var) -> Vec<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                vec![0.0; r * c]
            }
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        math::expm1(x)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { rows, cols, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_matrix(&self, v: Var) -> Matrix {
        let n = &self.nodes[v.0];
        Matrix::from_vec(n.rows, n.cols, n.value.clone())
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "constant payload");
        self.push(rows, cols, value, Op::Leaf, false)
    }

    pub fn constant_matrix(&mut self, m: &Matrix) -> Var {
        self.constant(m.rows(), m.cols(), m.as_slice().to_vec())
    }

    /// Parameter leaf; [`Tape::backward`] reports its gradient.
    pub fn param(&mut self, rows: usize, cols: usize, value: &[f64]) -> Var {
        assert_eq!(value.len(), rows * cols, "param payload");
        self.push(rows, cols, value.to_vec(), Op::Leaf, true)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        let (bsz, inp) = self.shape(x);
        let (out, win) = self.shape(w);
        if win != inp {
            return Err(DiffError::Shape { op: "linear", detail: "weight columns != input columns" });
        }
        if self.shape(b) != (1, out) {
            return Err(DiffError::Shape { op: "linear", detail: "bias must be 1 x out" });
        }
        let mut value = Vec::with_capacity(bsz * out);
        let bias = &self.nodes[b.0].value;
        for _ in 0..bsz {
            value.extend_from_slice(bias);
        }
        gemm(false, true, bsz, out, inp, 1.0, &self.nodes[x.0].value, &self.nodes[w.0].value, 1.0, &mut value);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(bsz, out, value, Op::Linear { x, w, b }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(DiffError::Shape { op: "matmul", detail: "inner dimensions differ" });
        }
        let mut value = vec![0.0; m * n];
        gemm(false, false, m, n, k, 1.0, &self.nodes[a.0].value, &self.nodes[b.0].value, 0.0, &mut value);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(m, n, value, Op::MatMul(a, b), ng))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::Shape { op: name, detail: "operands differ in shape" });
        }
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| f(*x, *y)).collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| f(*x)).collect();
        let ng = self.needs(a);
        self.push(r, c, value, op, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| s * x, Op::Scale(a, s))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, elu, Op::Elu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, math::tanh, Op::Tanh(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, math::sin, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, math::cos, Op::Cos(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let rows = parts.first().map_or(0, |p| self.shape(*p).0);
        if parts.iter().any(|p| self.shape(*p).0 != rows) {
            return Err(DiffError::Shape { op: "concat_cols", detail: "row counts differ" });
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut value = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let n = &self.nodes[p.0];
                value.extend_from_slice(&n.value[r * n.cols..(r + 1) * n.cols]);
            }
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(rows, cols, value, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(DiffError::Shape { op: "slice_cols", detail: "range exceeds columns" });
        }
        let src = &self.nodes[a.0].value;
        let mut value = Vec::with_capacity(rows * len);
        for r in 0..rows {
            value.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let ng = self.needs(a);
        Ok(self.push(rows, len, value, Op::SliceCols(a, start), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let cols = parts.first().map_or(0, |p| self.shape(*p).1);
        if parts.iter().any(|p| self.shape(*p).1 != cols) {
            return Err(DiffError::Shape { op: "concat_rows", detail: "column counts differ" });
        }
        let rows: usize = parts.iter().map(|p| self.shape(*p).0).sum();
        let mut value = Vec::with_capacity(rows * cols);
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(rows, cols, value, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let (rows, cols) = self.shape(a);
        if start + len > rows {
            return Err(DiffError::Shape { op: "slice_rows", detail: "range exceeds rows" });
        }
        let value = self.nodes[a.0].value[start * cols..(start + len) * cols].to_vec();
        let ng = self.needs(a);
        Ok(self.push(len, cols, value, Op::SliceRows(a, start), ng))
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var, DiffError> {
        let (rows, cols) = self.shape(a);
        if index.iter().any(|&i| i >= rows) {
            return Err(DiffError::Shape { op: "gather_rows", detail: "row index out of range" });
        }
        let src = &self.nodes[a.0].value;
        let mut value = Vec::with_capacity(index.len() * cols);
        for &i in &index {
            value.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let ng = self.needs(a);
        let n = index.len();
        Ok(self.push(n, cols, value, Op::GatherRows(a, index), ng))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        let ng = self.needs(a);
        self.push(1, 1, vec![s], Op::SumAll(a), ng)
    }

    /// Row-wise weighted least-squares fusion of subtask accelerations:
    ///
    /// `q̈ = (Σ Jᵀ M J)† Σ Jᵀ M (a − curv)`, with `M = L Lᵀ` and `L` the
    /// lower-triangular factor assembled from `chol` plus `diag_offset` on its
    /// diagonal. The pseudo-inverse drops eigen-directions at or below
    /// `rel_cutoff · λ_max`.
    ///
    /// The backward pass differentiates the solve as `A⁻¹ b`, which is exact
    /// whenever the fused metric has full rank.
    pub fn rmp_fuse(&mut self, terms: &[FuseTerm], dof: usize, diag_offset: f64, rel_cutoff: f64) -> Result<Var, DiffError> {
        let rows = match terms.first() {
            Some(t) => self.shape(t.accel).0,
            None => return Err(DiffError::Shape { op: "rmp_fuse", detail: "no subtasks" }),
        };
        for t in terms {
            let n = t.dim;
            let ok = self.shape(t.accel) == (rows, n)
                && self.shape(t.chol) == (rows, n * (n + 1) / 2)
                && self.shape(t.jac) == (rows, n * dof)
                && self.shape(t.curv) == (rows, n);
            if !ok {
                return Err(DiffError::Shape { op: "rmp_fuse", detail: "subtask block shapes" });
            }
        }
        let op = FuseOp { terms: terms.to_vec(), dof, diag_offset, rel_cutoff };
        let mut value = Vec::with_capacity(rows * dof);
        for r in 0..rows {
            let row = fuse_row(&self.nodes, &op, r);
            value.extend_from_slice(&row.x);
        }
        let ng = terms.iter().any(|t| self.needs(t.accel) || self.needs(t.chol) || self.needs(t.jac) || self.needs(t.curv));
        Ok(self.push(rows, dof, value, Op::RmpFuse(Box::new(op)), ng))
    }

    /// Reverse sweep from a `1×1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients, DiffError> {
        let (rows, cols) = self.shape(root);
        if (rows, cols) != (1, 1) {
            return Err(DiffError::NonScalarRoot { rows, cols });
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let shapes = self.nodes.iter().map(|n| (n.rows, n.cols)).collect();
        if !self.nodes[root.0].needs_grad {
            return Ok(Gradients { grads, shapes });
        }
        grads[root.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.rows * node.cols]))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (bsz, inp) = self.shape(*x);
                let out = node.cols;
                if let Some(dx) = self.acc(grads, *x) {
                    gemm(false, false, bsz, inp, out, 1.0, g, &self.nodes[w.0].value, 1.0, dx);
                }
                if let Some(dw) = self.acc(grads, *w) {
                    gemm(true, false, out, inp, bsz, 1.0, g, &self.nodes[x.0].value, 1.0, dw);
                }
                if let Some(db) = self.acc(grads, *b) {
                    for r in 0..bsz {
                        for (d, gv) in db.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = node.cols;
                if let Some(da) = self.acc(grads, *a) {
                    gemm(false, true, m, k, n, 1.0, g, &self.nodes[b.0].value, 1.0, da);
                }
                if let Some(db) = self.acc(grads, *b) {
                    gemm(true, false, k, n, m, 1.0, &self.nodes[a.0].value, g, 1.0, db);
                }
            }
            Op::Add(a, b) => {
                for (v, s) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(d) = self.acc(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, s) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(d) = self.acc(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(d) = self.acc(grads, *a) {
                    let bv = &self.nodes[b.0].value;
                    for ((d, g), y) in d.iter_mut().zip(g).zip(bv) {
                        *d += g * y;
                    }
                }
                if let Some(d) = self.acc(grads, *b) {
                    let av = &self.nodes[a.0].value;
                    for ((d, g), x) in d.iter_mut().zip(g).zip(av) {
                        *d += g * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g);
                }
            }
            Op::Elu(a) => {
                let x = &self.nodes[a.0].value;
                let y = &node.value;
                if let Some(d) = self.acc(grads, *a) {
                    for k in 0..d.len() {
                        let dy = if x[k] > 0.0 { 1.0 } else { y[k] + 1.0 };
                        d[k] += g[k] * dy;
                    }
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                if let Some(d) = self.acc(grads, *a) {
                    for k in 0..d.len() {
                        d[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
            }
            Op::Sin(a) => {
                let x = &self.nodes[a.0].value;
                if let Some(d) = self.acc(grads, *a) {
                    for k in 0..d.len() {
                        d[k] += g[k] * math::cos(x[k]);
                    }
                }
            }
            Op::Cos(a) => {
                let x = &self.nodes[a.0].value;
                if let Some(d) = self.acc(grads, *a) {
                    for k in 0..d.len() {
                        d[k] -= g[k] * math::sin(x[k]);
                    }
                }
            }
            Op::Square(a) => {
                let x = &self.nodes[a.0].value;
                if let Some(d) = self.acc(grads, *a) {
                    for k in 0..d.len() {
                        d[k] += 2.0 * g[k] * x[k];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let cols = node.cols;
                let mut offset = 0;
                for p in parts {
                    let pc = self.nodes[p.0].cols;
                    if let Some(d) = self.acc(grads, *p) {
                        for r in 0..node.rows {
                            let src = &g[r * cols + offset..r * cols + offset + pc];
                            for (d, s) in d[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceCols(a, start) => {
                let src_cols = self.nodes[a.0].cols;
                let len = node.cols;
                if let Some(d) = self.acc(grads, *a) {
                    for r in 0..node.rows {
                        let dst = &mut d[r * src_cols + start..r * src_cols + start + len];
                        for (d, s) in dst.iter_mut().zip(&g[r * len..(r + 1) * len]) {
                            *d += s;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(d) = self.acc(grads, *p) {
                        for (d, s) in d.iter_mut().zip(&g[offset..offset + len]) {
                            *d += s;
                        }
                    }
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let cols = node.cols;
                if let Some(d) = self.acc(grads, *a) {
                    let dst = &mut d[start * cols..start * cols + g.len()];
                    for (d, s) in dst.iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
            Op::GatherRows(a, index) => {
                let cols = node.cols;
                if let Some(d) = self.acc(grads, *a) {
                    for (r, &src) in index.iter().enumerate() {
                        for c in 0..cols {
                            d[src * cols + c] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::RmpFuse(op) => self.fuse_backward(op, g, grads),
        }
    }

    fn fuse_backward(&self, op: &FuseOp, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let d = op.dof;
        let rows = g.len() / d;
        for r in 0..rows {
            let row = fuse_row(&self.nodes, op, r);
            let gbar = &g[r * d..(r + 1) * d];
            let y = pinv_sym_solve(&row.metric, gbar, op.rel_cutoff).x;
            let x = &row.x;
            for (k, t) in op.terms.iter().enumerate() {
                let n = t.dim;
                let blk = &row.blocks[k];
                let j = &blk.jac;
                let m = &blk.metric;
                let u = j.matvec(&y);
                let v = j.matvec(x);
                let mu = m.matvec(&u);
                let r_minus_v: Vec<f64> = blk.residual.iter().zip(&v).map(|(a, b)| a - b).collect();
                let m_rv = m.matvec(&r_minus_v);
                if let Some(da) = self.acc(grads, t.accel) {
                    for i in 0..n {
                        da[r * n + i] += mu[i];
                    }
                }
                if let Some(dc) = self.acc(grads, t.curv) {
                    for i in 0..n {
                        dc[r * n + i] -= mu[i];
                    }
                }
                if let Some(dj) = self.acc(grads, t.jac) {
                    for i in 0..n {
                        for c in 0..d {
                            dj[r * n * d + i * d + c] += m_rv[i] * y[c] - mu[i] * x[c];
                        }
                    }
                }
                if let Some(dl) = self.acc(grads, t.chol) {
                    // ∂ℓ/∂M = u (r − v)ᵀ, ∂ℓ/∂L = (G + Gᵀ) L.
                    let lf = &blk.factor;
                    let w = n * (n + 1) / 2;
                    let mut idx = 0;
                    for a in 0..n {
                        for b in 0..=a {
                            let mut s = 0.0;
                            for c in 0..n {
                                let gac = u[a] * r_minus_v[c] + u[c] * r_minus_v[a];
                                s += gac * lf[(c, b)];
                            }
                            dl[r * w + idx] += s;
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
}

struct FuseBlock {
    factor: Matrix,
    metric: Matrix,
    jac: Matrix,
    residual: Vec<f64>,
}

struct FuseRow {
    blocks: Vec<FuseBlock>,
    metric: Matrix,
    x: Vec<f64>,
}

/// Assemble `L` (n×n) from packed row-major lower-triangular entries.
pub fn lower_from_packed(packed: &[f64], n: usize, diag_offset: f64) -> Matrix {
    let mut l = Matrix::zeros(n, n);
    let mut idx = 0;
    for a in 0..n {
        for b in 0..=a {
            l[(a, b)] = packed[idx] + if a == b { diag_offset } else { 0.0 };
            idx += 1;
        }
    }
    l
}

fn fuse_row(nodes: &[Node], op: &FuseOp, r: usize) -> FuseRow {
    let d = op.dof;
    let mut metric = Matrix::zeros(d, d);
    let mut rhs = vec![0.0; d];
    let mut blocks = Vec::with_capacity(op.terms.len());
    for t in &op.terms {
        let n = t.dim;
        let w = n * (n + 1) / 2;
        let row_of = |v: Var, width: usize| &nodes[v.0].value[r * width..(r + 1) * width];
        let factor = lower_from_packed(row_of(t.chol, w), n, op.diag_offset);
        let m = factor.matmul(&factor.transpose());
        let jac = Matrix::from_vec(n, d, row_of(t.jac, n * d).to_vec());
        let residual: Vec<f64> = row_of(t.accel, n).iter().zip(row_of(t.curv, n)).map(|(a, c)| a - c).collect();
        let mj = m.matmul(&jac);
        let jt_m_j = jac.transpose().matmul(&mj);
        metric.add_assign(&jt_m_j);
        let m_res = m.matvec(&residual);
        let contrib = jac.tr_matvec(&m_res);
        rhs.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b);
        blocks.push(FuseBlock { factor, metric: m, jac, residual });
    }
    let x = pinv_sym_solve(&metric, &rhs, op.rel_cutoff).x;
    FuseRow { blocks, metric, x }
}
