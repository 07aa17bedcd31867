//! Reverse-mode differentiation over a recorded computation tape.
//!
//! Forward evaluation is eager: every op computes its value immediately and
//! appends a node to the tape. [`Graph::backward`] walks the tape in reverse
//! and accumulates gradients for every leaf that requires them. Every
//! primitive checks shapes up front and verifies its output is finite.

use std::sync::Arc;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type Ids = Arc<Vec<usize>>;

#[derive(Debug, Clone)]
enum Op<T: Real> {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Add a `(m,1)` bias to every column of a `(m,n)` matrix.
    AddColVec(Var, Var),
    /// Multiply every row of a `(m,n)` matrix by a `(1,n)` vector.
    MulRowVec(Var, Var),
    /// Multiply every column of a `(m,n)` matrix by a `(m,1)` vector.
    MulColVec(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    /// `a * x + b` elementwise.
    Affine(Var, T, T),
    Clamp(Var, T, T),
    /// Column-wise softmax (over rows, one distribution per column).
    SoftmaxCols(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Transpose(Var),
    GatherRows(Var, Ids),
    GatherCols(Var, Ids),
    /// `y[i] = rows[i,:] . cols[:,i]` for `rows (n,d)`, `cols (d,n)`.
    RowDotCols(Var, Var),
    /// Mean of input rows grouped by segment id; empty segments yield zeros.
    SegmentMeanRows(Var, Ids, usize),
    /// Euclidean norm of each row: `(p,d) -> (p,1)`.
    RowsNorm(Var),
    SumAll(Var),
    MeanAll(Var),
}

struct Node<T: Real> {
    data: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded forward computation plus the leaves registered on it.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. a node, if any path reached it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].data
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].data.shape()
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_unchecked(t, Op::Leaf, false)
    }

    /// Named leaf; `trainable` leaves participate in backward.
    pub fn param(&mut self, name: &str, t: Tensor<T>, trainable: bool) -> Var {
        let var = self.push_unchecked(t, Op::Leaf, trainable);
        self.params.push((name.to_string(), var));
        var
    }

    /// Named leaves registered so far, in registration order.
    pub fn registered_params(&self) -> &[(String, Var)] {
        &self.params
    }

    fn push_unchecked(&mut self, data: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            data,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, kind: &'static str, data: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !data.all_finite() {
            return Err(Error::numeric(format!(
                "non-finite output from primitive `{kind}`"
            )));
        }
        let needs_grad = op_inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_unchecked(data, op, needs_grad))
    }

    fn shape_err(op: &'static str, detail: String) -> Error {
        Error::Shape { op, detail }
    }

    // ---- primitives ------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Self::shape_err(
                "matmul",
                format!("({ar}x{ac}) . ({br}x{bc}) inner dimensions differ"),
            ));
        }
        let out = self.nodes[a.0].data.array().dot(self.nodes[b.0].data.array());
        self.push("matmul", Tensor::from_array(out), Op::Matmul(a, b))
    }

    fn binary_same_shape(
        &mut self,
        kind: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(&Array2<T>, &Array2<T>) -> Array2<T>,
        op: Op<T>,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::shape_err(
                kind,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out = f(self.nodes[a.0].data.array(), self.nodes[b.0].data.array());
        self.push(kind, Tensor::from_array(out), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + bias` where `bias` is `(m,1)` broadcast across the columns of `a`.
    pub fn add_col_vec(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, _n) = self.shape(a);
        if self.shape(bias) != (m, 1) {
            return Err(Self::shape_err(
                "add_col_vec",
                format!("matrix {:?}, bias {:?}", self.shape(a), self.shape(bias)),
            ));
        }
        let out = self.nodes[a.0].data.array()
            + &self.nodes[bias.0]
                .data
                .array()
                .column(0)
                .insert_axis(Axis(1));
        self.push("add_col_vec", Tensor::from_array(out), Op::AddColVec(a, bias))
    }

    /// `a * v` where `v` is `(1,n)` broadcast down the rows of `a`.
    pub fn mul_row_vec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (_m, n) = self.shape(a);
        if self.shape(v) != (1, n) {
            return Err(Self::shape_err(
                "mul_row_vec",
                format!("matrix {:?}, row {:?}", self.shape(a), self.shape(v)),
            ));
        }
        let out =
            self.nodes[a.0].data.array() * &self.nodes[v.0].data.array().row(0).insert_axis(Axis(0));
        self.push("mul_row_vec", Tensor::from_array(out), Op::MulRowVec(a, v))
    }

    /// `a * v` where `v` is `(m,1)` broadcast across the columns of `a`.
    pub fn mul_col_vec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (m, _n) = self.shape(a);
        if self.shape(v) != (m, 1) {
            return Err(Self::shape_err(
                "mul_col_vec",
                format!("matrix {:?}, column {:?}", self.shape(a), self.shape(v)),
            ));
        }
        let out = self.nodes[a.0].data.array()
            * &self.nodes[v.0]
                .data
                .array()
                .column(0)
                .insert_axis(Axis(1));
        self.push("mul_col_vec", Tensor::from_array(out), Op::MulColVec(a, v))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.nodes[x.0].data.map(stable_sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.nodes[x.0].data.map(|v| v.tanh());
        self.push("tanh", out, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.nodes[x.0].data.map(|v| v.max(T::zero()));
        self.push("relu", out, Op::Relu(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = self.nodes[x.0].data.map(|v| v.ln());
        self.push("log", out, Op::Log(x))
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        let out = self.nodes[x.0].data.map(|v| scale * v + shift);
        self.push("affine", out, Op::Affine(x, scale, shift))
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        let out = self.nodes[x.0].data.map(|v| v.max(lo).min(hi));
        self.push("clamp", out, Op::Clamp(x, lo, hi))
    }

    /// Column-wise softmax: each column becomes a distribution over rows.
    pub fn softmax_cols(&mut self, x: Var) -> Result<Var> {
        let a = self.nodes[x.0].data.array();
        let mut out = a.clone();
        for mut col in out.columns_mut() {
            let max = col.iter().copied().fold(T::neg_infinity(), |m, v| m.max(v));
            let mut sum = T::zero();
            for v in col.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in col.iter_mut() {
                *v = *v / sum;
            }
        }
        self.push("softmax_cols", Tensor::from_array(out), Op::SoftmaxCols(x))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Self::shape_err("concat_rows", "no inputs".into()));
        }
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        for p in parts {
            let (r, c) = self.shape(*p);
            if c != cols {
                return Err(Self::shape_err(
                    "concat_rows",
                    format!("column counts differ: {c} vs {cols}"),
                ));
            }
            rows += r;
        }
        let mut out = Array2::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let a = self.nodes[p.0].data.array();
            out.slice_mut(ndarray::s![at..at + a.nrows(), ..]).assign(a);
            at += a.nrows();
        }
        self.push(
            "concat_rows",
            Tensor::from_array(out),
            Op::ConcatRows(parts.to_vec()),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Self::shape_err("concat_cols", "no inputs".into()));
        }
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for p in parts {
            let (r, c) = self.shape(*p);
            if r != rows {
                return Err(Self::shape_err(
                    "concat_cols",
                    format!("row counts differ: {r} vs {rows}"),
                ));
            }
            cols += c;
        }
        let mut out = Array2::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let a = self.nodes[p.0].data.array();
            out.slice_mut(ndarray::s![.., at..at + a.ncols()]).assign(a);
            at += a.ncols();
        }
        self.push(
            "concat_cols",
            Tensor::from_array(out),
            Op::ConcatCols(parts.to_vec()),
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.nodes[x.0].data.array().t().to_owned();
        self.push("transpose", Tensor::from_array(out), Op::Transpose(x))
    }

    /// `out[i,:] = x[ids[i],:]`.
    pub fn gather_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::data(format!(
                "gather_rows: row index {bad} out of range (rows={rows})"
            )));
        }
        let a = self.nodes[x.0].data.array();
        let mut out = Array2::zeros((ids.len(), cols));
        for (dst, &src) in ids.iter().enumerate() {
            out.row_mut(dst).assign(&a.row(src));
        }
        self.push(
            "gather_rows",
            Tensor::from_array(out),
            Op::GatherRows(x, Arc::new(ids.to_vec())),
        )
    }

    /// `out[:,j] = x[:,ids[j]]`.
    pub fn gather_cols(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if let Some(bad) = ids.iter().find(|&&i| i >= cols) {
            return Err(Error::data(format!(
                "gather_cols: column index {bad} out of range (cols={cols})"
            )));
        }
        let a = self.nodes[x.0].data.array();
        let mut out = Array2::zeros((rows, ids.len()));
        for (dst, &src) in ids.iter().enumerate() {
            out.column_mut(dst).assign(&a.column(src));
        }
        self.push(
            "gather_cols",
            Tensor::from_array(out),
            Op::GatherCols(x, Arc::new(ids.to_vec())),
        )
    }

    /// `out[i] = rows[i,:] . cols[:,i]` — one dot product per aligned pair.
    pub fn row_dot_cols(&mut self, rows: Var, cols: Var) -> Result<Var> {
        let (n, d) = self.shape(rows);
        let (d2, n2) = self.shape(cols);
        if d != d2 || n != n2 {
            return Err(Self::shape_err(
                "row_dot_cols",
                format!("rows ({n}x{d}) vs cols ({d2}x{n2})"),
            ));
        }
        let ra = self.nodes[rows.0].data.array();
        let ca = self.nodes[cols.0].data.array();
        let mut out = Array2::zeros((n, 1));
        for i in 0..n {
            let mut acc = T::zero();
            for k in 0..d {
                acc = acc + ra[(i, k)] * ca[(k, i)];
            }
            out[(i, 0)] = acc;
        }
        self.push(
            "row_dot_cols",
            Tensor::from_array(out),
            Op::RowDotCols(rows, cols),
        )
    }

    /// Mean of input rows per segment id; empty segments produce zero rows.
    pub fn segment_mean_rows(&mut self, x: Var, segments: &[usize], n_out: usize) -> Result<Var> {
        let (p, d) = self.shape(x);
        if segments.len() != p {
            return Err(Self::shape_err(
                "segment_mean_rows",
                format!("{p} rows but {} segment ids", segments.len()),
            ));
        }
        if let Some(bad) = segments.iter().find(|&&s| s >= n_out) {
            return Err(Error::data(format!(
                "segment_mean_rows: segment id {bad} out of range (n_out={n_out})"
            )));
        }
        let a = self.nodes[x.0].data.array();
        let mut out = Array2::zeros((n_out, d));
        let mut counts = vec![0usize; n_out];
        for (row, &seg) in segments.iter().enumerate() {
            counts[seg] += 1;
            let src = a.row(row);
            let mut dst = out.row_mut(seg);
            dst += &src;
        }
        for (seg, &count) in counts.iter().enumerate() {
            if count > 1 {
                let inv = T::from_f64(1.0 / count as f64);
                out.row_mut(seg).mapv_inplace(|v| v * inv);
            }
        }
        self.push(
            "segment_mean_rows",
            Tensor::from_array(out),
            Op::SegmentMeanRows(x, Arc::new(segments.to_vec()), n_out),
        )
    }

    /// Euclidean norm of every row: `(p,d) -> (p,1)`.
    pub fn rows_norm(&mut self, x: Var) -> Result<Var> {
        let a = self.nodes[x.0].data.array();
        let mut out = Array2::zeros((a.nrows(), 1));
        for (i, row) in a.rows().into_iter().enumerate() {
            let sq = row.iter().fold(T::zero(), |acc, v| acc + *v * *v);
            out[(i, 0)] = sq.sqrt();
        }
        self.push("rows_norm", Tensor::from_array(out), Op::RowsNorm(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].data.array().iter().fold(T::zero(), |a, v| a + *v);
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.nodes[x.0].data.len();
        if n == 0 {
            return Err(Self::shape_err("mean_all", "empty tensor".into()));
        }
        let s = self.nodes[x.0].data.array().iter().fold(T::zero(), |a, v| a + *v);
        self.push(
            "mean_all",
            Tensor::scalar(s / T::from_f64(n as f64)),
            Op::MeanAll(x),
        )
    }

    // ---- backward --------------------------------------------------------

    /// Reverse pass from a scalar loss. Gradients accumulate on every node
    /// that leads to a trainable leaf; leaves unreachable from the loss
    /// simply stay `None` (callers treat that as a zero gradient).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.shape(loss) != (1, 1) {
            return Err(Self::shape_err(
                "backward",
                format!("loss must be (1,1), got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = Some(grad);
                continue;
            }
            let g = grad.array();
            match &node.op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let av = self.nodes[a.0].data.array();
                    let bv = self.nodes[b.0].data.array();
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut grads, *a, g.dot(&bv.t()));
                    }
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut grads, *b, av.t().dot(g));
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut grads, *b, g.mapv(|v| -v));
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut grads, *a, g * self.nodes[b.0].data.array());
                    }
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut grads, *b, g * self.nodes[a.0].data.array());
                    }
                }
                Op::AddColVec(a, bias) => {
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.nodes[bias.0].needs_grad {
                        let summed = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                        accumulate(&mut grads, *bias, summed);
                    }
                }
                Op::MulRowVec(a, v) => {
                    let av = self.nodes[a.0].data.array();
                    let vv = self.nodes[v.0].data.array();
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut grads, *a, g * &vv.row(0).insert_axis(Axis(0)));
                    }
                    if self.nodes[v.0].needs_grad {
                        let summed = (g * av).sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *v, summed);
                    }
                }
                Op::MulColVec(a, v) => {
                    let av = self.nodes[a.0].data.array();
                    let vv = self.nodes[v.0].data.array();
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut grads, *a, g * &vv.column(0).insert_axis(Axis(1)));
                    }
                    if self.nodes[v.0].needs_grad {
                        let summed = (g * av).sum_axis(Axis(1)).insert_axis(Axis(1));
                        accumulate(&mut grads, *v, summed);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.data.array();
                    let dx = g * &y.mapv(|v| v * (T::one() - v));
                    accumulate(&mut grads, *x, dx);
                }
                Op::Tanh(x) => {
                    let y = node.data.array();
                    let dx = g * &y.mapv(|v| T::one() - v * v);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let xv = self.nodes[x.0].data.array();
                    let mut dx = g.clone();
                    dx.zip_mut_with(xv, |gv, xv| {
                        if *xv <= T::zero() {
                            *gv = T::zero();
                        }
                    });
                    accumulate(&mut grads, *x, dx);
                }
                Op::Log(x) => {
                    let xv = self.nodes[x.0].data.array();
                    accumulate(&mut grads, *x, g / xv);
                }
                Op::Affine(x, scale, _shift) => {
                    accumulate(&mut grads, *x, g.mapv(|v| v * *scale));
                }
                Op::Clamp(x, lo, hi) => {
                    let xv = self.nodes[x.0].data.array();
                    let mut dx = g.clone();
                    dx.zip_mut_with(xv, |gv, xv| {
                        if !(*xv > *lo && *xv < *hi) {
                            *gv = T::zero();
                        }
                    });
                    accumulate(&mut grads, *x, dx);
                }
                Op::SoftmaxCols(x) => {
                    let y = node.data.array();
                    let mut dx = Array2::zeros(y.raw_dim());
                    for j in 0..y.ncols() {
                        let mut dot = T::zero();
                        for i in 0..y.nrows() {
                            dot = dot + g[(i, j)] * y[(i, j)];
                        }
                        for i in 0..y.nrows() {
                            dx[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let rows = self.nodes[p.0].data.rows();
                        if self.nodes[p.0].needs_grad {
                            let slice = g.slice(ndarray::s![at..at + rows, ..]).to_owned();
                            accumulate(&mut grads, *p, slice);
                        }
                        at += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let cols = self.nodes[p.0].data.cols();
                        if self.nodes[p.0].needs_grad {
                            let slice = g.slice(ndarray::s![.., at..at + cols]).to_owned();
                            accumulate(&mut grads, *p, slice);
                        }
                        at += cols;
                    }
                }
                Op::Transpose(x) => {
                    accumulate(&mut grads, *x, g.t().to_owned());
                }
                Op::GatherRows(x, ids) => {
                    let (rows, cols) = self.nodes[x.0].data.shape();
                    let mut dx = Array2::zeros((rows, cols));
                    for (src_row, &dst_row) in ids.iter().enumerate() {
                        let mut acc = dx.row_mut(dst_row);
                        acc += &g.row(src_row);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::GatherCols(x, ids) => {
                    let (rows, cols) = self.nodes[x.0].data.shape();
                    let mut dx = Array2::zeros((rows, cols));
                    for (src_col, &dst_col) in ids.iter().enumerate() {
                        let mut acc = dx.column_mut(dst_col);
                        acc += &g.column(src_col);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::RowDotCols(rows, cols) => {
                    let ra = self.nodes[rows.0].data.array();
                    let ca = self.nodes[cols.0].data.array();
                    let (n, d) = (ra.nrows(), ra.ncols());
                    if self.nodes[rows.0].needs_grad {
                        let mut dr = Array2::zeros((n, d));
                        for i in 0..n {
                            let gi = g[(i, 0)];
                            for k in 0..d {
                                dr[(i, k)] = gi * ca[(k, i)];
                            }
                        }
                        accumulate(&mut grads, *rows, dr);
                    }
                    if self.nodes[cols.0].needs_grad {
                        let mut dc = Array2::zeros((d, n));
                        for i in 0..n {
                            let gi = g[(i, 0)];
                            for k in 0..d {
                                dc[(k, i)] = gi * ra[(i, k)];
                            }
                        }
                        accumulate(&mut grads, *cols, dc);
                    }
                }
                Op::SegmentMeanRows(x, segments, n_out) => {
                    let (p, d) = self.nodes[x.0].data.shape();
                    let mut counts = vec![0usize; *n_out];
                    for &seg in segments.iter() {
                        counts[seg] += 1;
                    }
                    let mut dx = Array2::zeros((p, d));
                    for (row, &seg) in segments.iter().enumerate() {
                        let inv = T::from_f64(1.0 / counts[seg] as f64);
                        for k in 0..d {
                            dx[(row, k)] = g[(seg, k)] * inv;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::RowsNorm(x) => {
                    let xv = self.nodes[x.0].data.array();
                    let y = node.data.array();
                    let mut dx = Array2::zeros(xv.raw_dim());
                    for i in 0..xv.nrows() {
                        let norm = y[(i, 0)];
                        if norm > T::zero() {
                            let gi = g[(i, 0)] / norm;
                            for k in 0..xv.ncols() {
                                dx[(i, k)] = gi * xv[(i, k)];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SumAll(x) => {
                    let gv = g[(0, 0)];
                    let (r, c) = self.nodes[x.0].data.shape();
                    accumulate(&mut grads, *x, Array2::from_elem((r, c), gv));
                }
                Op::MeanAll(x) => {
                    let (r, c) = self.nodes[x.0].data.shape();
                    let gv = g[(0, 0)] / T::from_f64((r * c) as f64);
                    accumulate(&mut grads, *x, Array2::from_elem((r, c), gv));
                }
            }
            grads[id] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    /// Gradients for every registered trainable leaf; leaves unreachable
    /// from the loss report zeros.
    pub fn param_gradients(&self, gradients: &Gradients<T>) -> Vec<(String, Tensor<T>)> {
        self.params
            .iter()
            .filter(|(_, var)| self.nodes[var.0].needs_grad)
            .map(|(name, var)| {
                let grad = gradients
                    .get(*var)
                    .cloned()
                    .unwrap_or_else(|| {
                        let (r, c) = self.shape(*var);
                        Tensor::zeros(r, c)
                    });
                (name.clone(), grad)
            })
            .collect()
    }
}

fn op_inputs<T: Real>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Matmul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddColVec(a, b)
        | Op::MulRowVec(a, b)
        | Op::MulColVec(a, b)
        | Op::RowDotCols(a, b) => vec![*a, *b],
        Op::Sigmoid(x)
        | Op::Tanh(x)
        | Op::Relu(x)
        | Op::Log(x)
        | Op::Affine(x, _, _)
        | Op::Clamp(x, _, _)
        | Op::SoftmaxCols(x)
        | Op::Transpose(x)
        | Op::GatherRows(x, _)
        | Op::GatherCols(x, _)
        | Op::SegmentMeanRows(x, _, _)
        | Op::RowsNorm(x)
        | Op::SumAll(x)
        | Op::MeanAll(x) => vec![*x],
        Op::ConcatRows(parts) | Op::ConcatCols(parts) => parts.clone(),
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], var: Var, delta: Array2<T>) {
    match &mut grads[var.0] {
        Some(existing) => {
            *existing.array_mut() += &delta;
        }
        slot @ None => {
            *slot = Some(Tensor::from_array(delta));
        }
    }
}

/// Overflow-safe logistic function.
pub fn stable_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
