//! The computation tape and its operations.
//!
//! Every op evaluates eagerly, appends a node holding its value, and knows
//! how to push a gradient back to its parents. Tensors handled by ops are
//! 2-D `[rows, cols]`; the only broadcasting is a bias row over the batch
//! (`add_row`) and a per-row scalar across columns (`mul_col`).

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::AutodiffError;
use crate::lie::so3::{exp_so3, exp_so3_derivatives, Vec3};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    Recip(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    GroupNorm(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
    Reshape(Var),
    So3Exp(Var),
    BatchMatMul(Var, Var, [usize; 3]),
    ClampNorm3(Var, f64),
    SoftmaxCrossEntropy(Var, Vec<usize>, Tensor),
    ScalarFn(Var, Tensor),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape. Not shared across threads; build one per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn mismatch<T>(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<T, AutodiffError> {
    Err(AutodiffError::ShapeMismatch(format!("{what}: {a:?} vs {b:?}")))
}

/// `c = a · b` for row-major `a` [m,k] and `b` [k,n]; transposes via strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    // stored shapes: a is [m,k] or [k,m] when transposed; b is [k,n] or [n,k]
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the slices cover exactly the strided extents described above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape2(&self.nodes[v.0].value)
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = normalize(t);
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable input that is not a stored parameter.
    pub fn variable(&mut self, t: Tensor) -> Var {
        let t = normalize(t);
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(normalize(store.value(id).clone()), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return mismatch("matmul", (m, k), (k2, n));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), ng))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return mismatch(name, sa, sb);
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::matrix(sa.0, sa.1, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// `x + row`, broadcasting a `[1, n]` row over the batch.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(x);
        let sr = self.shape(row);
        if sr != (1, c) {
            return mismatch("add_row", (r, c), sr);
        }
        let b = self.value(row).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_exact_mut(c.max(1)) {
            for (v, bb) in chunk.iter_mut().zip(&b) {
                *v += bb;
            }
        }
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::AddRow(x, row), ng))
    }

    /// `x * col`, scaling each row of `x` by the matching entry of `col` `[B, 1]`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(x);
        let sc = self.shape(col);
        if sc != (r, 1) {
            return mismatch("mul_col", (r, c), sc);
        }
        let s = self.value(col).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        if c > 0 {
            for (chunk, sv) in data.chunks_exact_mut(c).zip(&s) {
                for v in chunk.iter_mut() {
                    *v *= sv;
                }
            }
        }
        let ng = self.ng(x) || self.ng(col);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::MulCol(x, col), ng))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x).map(f);
        let ng = self.ng(x);
        self.push(t, op, ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, Op::Recip(x), |v| 1.0 / v)
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.sum() / t.len().max(1) as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(m), Op::Mean(x), ng)
    }

    /// Row sums, `[B, n] -> [B, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let t = self.value(x);
        let data: Vec<f64> = (0..r).map(|i| t.data()[i * c..(i + 1) * c].iter().sum()).collect();
        let ng = self.ng(x);
        self.push(Tensor::matrix(r, 1, data).expect("shape"), Op::SumCols(x), ng)
    }

    /// Euclidean norm of consecutive groups of `group` columns,
    /// `[B, g·m] -> [B, m]`. The gradient at a zero norm is taken as zero.
    pub fn l2_norm_groups(&mut self, x: Var, group: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(x);
        if group == 0 || c % group != 0 {
            return Err(AutodiffError::ShapeMismatch(format!(
                "{c} columns do not split into groups of {group}"
            )));
        }
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(group)
            .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(r, c / group, data)?, Op::GroupNorm(x, group), ng))
    }

    /// Row-wise Euclidean norm, `[B, n] -> [B, 1]`.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let c = self.shape(x).1;
        self.l2_norm_groups(x, c.max(1))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = parts.first().map(|&p| self.shape(p).0).unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return mismatch("concat_cols", (rows, cols), s);
            }
            cols += s.1;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(x);
        if start > end || end > c {
            return Err(AutodiffError::ShapeMismatch(format!(
                "column slice {start}..{end} of {c} columns"
            )));
        }
        let w = end - start;
        let t = self.value(x);
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&t.data()[i * c + start..i * c + end]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(r, w, data)?, Op::SliceCols(x, start), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let cols = parts.first().map(|&p| self.shape(p).1).unwrap_or(0);
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.1 != cols {
                return mismatch("concat_rows", (rows, cols), s);
            }
            rows += s.0;
            data.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Rows picked by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(AutodiffError::ShapeMismatch(format!("row {bad} of {r}")));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(t.row_slice(i));
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(index.len(), c, data)?, Op::GatherRows(x, index.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let index: Vec<usize> = (start..end).collect();
        self.gather_rows(x, &index)
    }

    /// Columns picked by index (repeats allowed).
    pub fn gather_cols(&mut self, x: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= c) {
            return Err(AutodiffError::ShapeMismatch(format!("column {bad} of {c}")));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(r * index.len());
        for i in 0..r {
            let row = t.row_slice(i);
            data.extend(index.iter().map(|&j| row[j]));
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(r, index.len(), data)?, Op::GatherCols(x, index.to_vec()), ng))
    }

    /// Same row-major data viewed as `rows × cols`.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(x);
        if r * c != rows * cols {
            return mismatch("reshape", (r, c), (rows, cols));
        }
        let t = Tensor::matrix(rows, cols, self.value(x).data().to_vec())?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// Row-wise exponential map: `[B, 3]` axis-angle rows to `[B, 9]`
    /// row-major rotation matrices.
    pub fn so3_exp(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(x);
        if c != 3 {
            return mismatch("so3_exp", (r, c), (r, 3));
        }
        let mut data = Vec::with_capacity(r * 9);
        for w in self.value(x).data().chunks_exact(3) {
            let m = exp_so3(&Vec3::new(w[0], w[1], w[2])).into_inner();
            for i in 0..3 {
                for j in 0..3 {
                    data.push(m[(i, j)]);
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(r, 9, data)?, Op::So3Exp(x), ng))
    }

    /// Per-row matrix product: row `i` of `a` is an `m×k` matrix, row `i` of
    /// `b` a `k×n` matrix (both row-major); the result row is `m×n`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, m: usize, k: usize, n: usize) -> Result<Var, AutodiffError> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ca != m * k || cb != k * n || ra != rb {
            return mismatch("batch_matmul", (ra, ca), (rb, cb));
        }
        let mut data = vec![0.0; ra * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for row in 0..ra {
            let ar = &av[row * m * k..(row + 1) * m * k];
            let br = &bv[row * k * n..(row + 1) * k * n];
            let out = &mut data[row * m * n..(row + 1) * m * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = ar[i * k + p];
                    for j in 0..n {
                        out[i * n + j] += aip * br[p * n + j];
                    }
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(ra, m * n, data)?, Op::BatchMatMul(a, b, [m, k, n]), ng))
    }

    /// Rescales each consecutive 3-vector onto the ball of radius `max_norm`.
    /// Returns the node and how many vectors were rescaled.
    pub fn clamp_norm3(&mut self, x: Var, max_norm: f64) -> Result<(Var, usize), AutodiffError> {
        let (r, c) = self.shape(x);
        if c % 3 != 0 {
            return mismatch("clamp_norm3", (r, c), (r, c / 3 * 3));
        }
        let mut data = self.value(x).data().to_vec();
        let mut clamped = 0;
        for w in data.chunks_exact_mut(3) {
            let n = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
            if n > max_norm {
                clamped += 1;
                for v in w.iter_mut() {
                    *v *= max_norm / n;
                }
            }
        }
        let ng = self.ng(x);
        Ok((self.push(Tensor::matrix(r, c, data)?, Op::ClampNorm3(x, max_norm), ng), clamped))
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, AutodiffError> {
        let (b, c) = self.shape(logits);
        if labels.len() != b || labels.iter().any(|&l| l >= c) {
            return Err(AutodiffError::ShapeMismatch(format!(
                "{} labels for {b}x{c} logits",
                labels.len()
            )));
        }
        let probs = softmax_rows(self.value(logits));
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -(probs.get(i, l).max(1e-300)).ln())
            .sum::<f64>()
            / b.max(1) as f64;
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy(logits, labels.to_vec(), probs),
            ng,
        ))
    }

    /// Scalar function of `x` evaluated outside the tape, given its value and
    /// gradient at the current input.
    pub fn scalar_fn(&mut self, x: Var, value: f64, grad: Tensor) -> Result<Var, AutodiffError> {
        if grad.len() != self.value(x).len() {
            return mismatch("scalar_fn", self.shape(x), shape2(&grad));
        }
        let grad = grad.reshaped(self.value(x).shape().to_vec())?;
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(value), Op::ScalarFn(x, grad), ng))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let seed = self.value(loss).map(|_| 1.0);
        grads[loss.0] = Some(seed);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(g.reshaped(shape).expect("gradient shape"));
            }
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let elementwise = |x: Var, f: &dyn Fn(f64, f64, f64) -> f64| -> Tensor {
            let xv = self.value(x).data();
            let data = g
                .data()
                .iter()
                .zip(xv)
                .zip(y.data())
                .map(|((&gi, &xi), &yi)| f(gi, xi, yi))
                .collect();
            Tensor::new(self.value(x).shape().to_vec(), data).expect("shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), true, &mut da, 0.0);
                    self.acc(grads, *a, Tensor::matrix(m, k, da).expect("shape"));
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, g.data(), false, &mut db, 0.0);
                    self.acc(grads, *b, Tensor::matrix(k, n, db).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let ga = zip_map(g, self.value(*b), |gi, bi| gi * bi);
                    self.acc(grads, *a, ga);
                }
                if self.ng(*b) {
                    let gb = zip_map(g, self.value(*a), |gi, ai| gi * ai);
                    self.acc(grads, *b, gb);
                }
            }
            Op::AddRow(x, row) => {
                self.acc(grads, *x, g.clone());
                if self.ng(*row) {
                    let c = g.cols();
                    let mut s = vec![0.0; c];
                    for chunk in g.data().chunks_exact(c.max(1)) {
                        for (a, b) in s.iter_mut().zip(chunk) {
                            *a += b;
                        }
                    }
                    self.acc(grads, *row, Tensor::row(s));
                }
            }
            Op::MulCol(x, col) => {
                let c = g.cols();
                if self.ng(*x) {
                    let s = self.value(*col).data();
                    let mut data = g.data().to_vec();
                    for (chunk, sv) in data.chunks_exact_mut(c.max(1)).zip(s) {
                        for v in chunk.iter_mut() {
                            *v *= sv;
                        }
                    }
                    self.acc(grads, *x, Tensor::matrix(g.rows(), c, data).expect("shape"));
                }
                if self.ng(*col) {
                    let xv = self.value(*x).data();
                    let data: Vec<f64> = g
                        .data()
                        .chunks_exact(c.max(1))
                        .zip(xv.chunks_exact(c.max(1)))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    self.acc(grads, *col, Tensor::matrix(g.rows(), 1, data).expect("shape"));
                }
            }
            Op::Scale(x, s) => self.acc(grads, *x, g.map(|v| v * s)),
            Op::AddScalar(x) => self.acc(grads, *x, g.clone()),
            Op::Tanh(x) => self.acc(grads, *x, elementwise(*x, &|gi, _, yi| gi * (1.0 - yi * yi))),
            Op::Sigmoid(x) => self.acc(grads, *x, elementwise(*x, &|gi, _, yi| gi * yi * (1.0 - yi))),
            Op::Relu(x) => self.acc(grads, *x, elementwise(*x, &|gi, xi, _| if xi > 0.0 { gi } else { 0.0 })),
            Op::Exp(x) => self.acc(grads, *x, elementwise(*x, &|gi, _, yi| gi * yi)),
            Op::Square(x) => self.acc(grads, *x, elementwise(*x, &|gi, xi, _| 2.0 * gi * xi)),
            Op::Recip(x) => self.acc(grads, *x, elementwise(*x, &|gi, _, yi| -gi * yi * yi)),
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.acc(
                    grads,
                    *x,
                    elementwise(*x, &|gi, xi, _| if xi > lo && xi < hi { gi } else { 0.0 }),
                )
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.acc(grads, *x, self.value(*x).map(|_| gv));
            }
            Op::Mean(x) => {
                let gv = g.item() / self.value(*x).len().max(1) as f64;
                self.acc(grads, *x, self.value(*x).map(|_| gv));
            }
            Op::SumCols(x) => {
                let (r, c) = self.shape(*x);
                let mut data = Vec::with_capacity(r * c);
                for &gi in g.data() {
                    data.extend(std::iter::repeat_n(gi, c));
                }
                self.acc(grads, *x, Tensor::matrix(r, c, data).expect("shape"));
            }
            Op::GroupNorm(x, group) => {
                let xv = self.value(*x).data();
                let mut data = vec![0.0; xv.len()];
                for (gi, ((norm, xs), out)) in g.data().iter().zip(
                    y.data()
                        .iter()
                        .zip(xv.chunks_exact(*group))
                        .zip(data.chunks_exact_mut(*group)),
                ) {
                    if *norm > 0.0 {
                        for (o, xi) in out.iter_mut().zip(xs) {
                            *o = gi * xi / norm;
                        }
                    }
                }
                let (r, c) = self.shape(*x);
                self.acc(grads, *x, Tensor::matrix(r, c, data).expect("shape"));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.ng(p) {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        self.acc(grads, p, Tensor::matrix(rows, w, data).expect("shape"));
                    }
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.shape(*x);
                let w = g.cols();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    data[i * c + start..i * c + start + w].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                self.acc(grads, *x, Tensor::matrix(r, c, data).expect("shape"));
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.shape(p).0;
                    if self.ng(p) {
                        let data = g.data()[offset * c..(offset + r) * c].to_vec();
                        self.acc(grads, p, Tensor::matrix(r, c, data).expect("shape"));
                    }
                    offset += r;
                }
            }
            Op::GatherRows(x, index) => {
                let (r, c) = self.shape(*x);
                let mut data = vec![0.0; r * c];
                for (k, &i) in index.iter().enumerate() {
                    for j in 0..c {
                        data[i * c + j] += g.data()[k * c + j];
                    }
                }
                self.acc(grads, *x, Tensor::matrix(r, c, data).expect("shape"));
            }
            Op::GatherCols(x, index) => {
                let (r, c) = self.shape(*x);
                let w = index.len();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    for (k, &j) in index.iter().enumerate() {
                        data[i * c + j] += g.data()[i * w + k];
                    }
                }
                self.acc(grads, *x, Tensor::matrix(r, c, data).expect("shape"));
            }
            Op::Reshape(x) => {
                let (r, c) = self.shape(*x);
                self.acc(grads, *x, Tensor::matrix(r, c, g.data().to_vec()).expect("shape"));
            }
            Op::So3Exp(x) => {
                let xv = self.value(*x).data();
                let mut data = Vec::with_capacity(xv.len());
                for (w, gr) in xv.chunks_exact(3).zip(g.data().chunks_exact(9)) {
                    let d = exp_so3_derivatives(&Vec3::new(w[0], w[1], w[2]));
                    for dk in &d {
                        let mut s = 0.0;
                        for i in 0..3 {
                            for j in 0..3 {
                                s += gr[i * 3 + j] * dk[(i, j)];
                            }
                        }
                        data.push(s);
                    }
                }
                let (r, c) = self.shape(*x);
                self.acc(grads, *x, Tensor::matrix(r, c, data).expect("shape"));
            }
            Op::BatchMatMul(a, b, [m, k, n]) => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let rows = g.rows();
                let mut da = vec![0.0; rows * m * k];
                let mut db = vec![0.0; rows * k * n];
                for row in 0..rows {
                    let gr = &g.data()[row * m * n..(row + 1) * m * n];
                    let ar = &av[row * m * k..(row + 1) * m * k];
                    let br = &bv[row * k * n..(row + 1) * k * n];
                    let dar = &mut da[row * m * k..(row + 1) * m * k];
                    let dbr = &mut db[row * k * n..(row + 1) * k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += gr[i * n + j] * br[p * n + j];
                                dbr[p * n + j] += ar[i * k + p] * gr[i * n + j];
                            }
                            dar[i * k + p] = s;
                        }
                    }
                }
                self.acc(grads, *a, Tensor::matrix(rows, m * k, da).expect("shape"));
                self.acc(grads, *b, Tensor::matrix(rows, k * n, db).expect("shape"));
            }
            Op::ClampNorm3(x, max_norm) => {
                let xv = self.value(*x).data();
                let mut data = Vec::with_capacity(xv.len());
                for (w, gw) in xv.chunks_exact(3).zip(g.data().chunks_exact(3)) {
                    let n = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
                    if n > *max_norm {
                        // d(m w/|w|) = m/|w| (I - u uᵀ)
                        let u = [w[0] / n, w[1] / n, w[2] / n];
                        let gu = gw[0] * u[0] + gw[1] * u[1] + gw[2] * u[2];
                        for i in 0..3 {
                            data.push(max_norm / n * (gw[i] - gu * u[i]));
                        }
                    } else {
                        data.extend_from_slice(gw);
                    }
                }
                let (r, c) = self.shape(*x);
                self.acc(grads, *x, Tensor::matrix(r, c, data).expect("shape"));
            }
            Op::SoftmaxCrossEntropy(x, labels, probs) => {
                let b = probs.rows();
                let scale = g.item() / b.max(1) as f64;
                let mut d = probs.clone();
                let c = d.cols();
                for (i, &l) in labels.iter().enumerate() {
                    d.data_mut()[i * c + l] -= 1.0;
                }
                self.acc(grads, *x, d.map(|v| v * scale));
            }
            Op::ScalarFn(x, grad) => {
                let gv = g.item();
                self.acc(grads, *x, grad.map(|v| v * gv));
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a node, `None` if no gradient reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a node, zeros when nothing reached it.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }

    /// Gradients for every parameter of `store` bound on `tape`, aligned with
    /// the store's parameter order; unbound parameters get zeros.
    pub fn param_grads(&self, tape: &Tape, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        for (id, var) in tape.bound_params() {
            if let Some(g) = self.get(var) {
                out[id.index()] = g.clone().reshaped(store.value(id).shape().to_vec()).expect("shape");
            }
        }
        out
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut out = t.data().to_vec();
    for row in out.chunks_exact_mut(c.max(1)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::matrix(t.rows(), c, out).expect("shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(b.shape().to_vec(), data).expect("shape")
}

fn normalize(t: Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    t.reshaped(vec![r, c]).expect("2-D view")
}
