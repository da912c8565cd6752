//! Matrix-level reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied to its variables in execution
//! order. Because an operation can only consume variables that already
//! exist, recording order is a topological order and [`Tape::backward`]
//! simply walks the nodes from last to first, visiting each once.
//!
//! ```
//! use mmdfn::numerics::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let w = tape.param("w", Tensor::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap());
//! let sq = tape.mul(w, w).unwrap();
//! let loss = tape.affine(tape.sum(sq), 0.5, 0.0);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads["w"].data(), &[1.0, -2.0, 3.0, 0.5]);
//! ```

use std::cell::{Ref, RefCell};

use indexmap::IndexMap;

use super::tensor::{relu, sigmoid, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddBias { x: Var, bias: Var },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Acos(Var),
    Powf { x: Var, exponent: f64 },
    Clamp { x: Var, lo: f64, hi: f64 },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    RowSum(Var),
    Pick { x: Var, columns: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    RowNormalize { x: Var, norms: Vec<f64> },
    SymScale { x: Var, scale: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Norm below which a row is treated as the zero vector by
/// [`Tape::row_normalize`].
pub const ROW_NORM_FLOOR: f64 = 1e-12;

/// Recording of primitive operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<(String, Var)>>,
}

/// Parameter gradients keyed by parameter name, in registration order.
pub type Gradients = IndexMap<String, Tensor>;

/// Per-node adjoints from one reverse sweep.
#[derive(Debug)]
pub struct Adjoints {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Adjoints {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    /// A value that gradients flow into but that is not a named parameter.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Alias of [`Tape::leaf`] for inputs that are never differentiated.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A named trainable parameter; its gradient is reported by
    /// [`Tape::backward`].
    pub fn param(&self, name: &str, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.params.borrow_mut().push((name.to_string(), v));
        v
    }

    /// Parameters registered so far, in registration order.
    pub fn params(&self) -> Vec<(String, Var)> {
        self.params.borrow().clone()
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v).dims2()
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dims2() != vb.dims2() {
            return Err(Error::dimension(op, va.shape(), vb.shape()));
        }
        Ok(())
    }

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).map(f);
        self.push(out, op)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("add", a, b)?;
        let out = self.value(a).zip_map(&self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("sub", a, b)?;
        let out = self.value(a).zip_map(&self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("mul", a, b)?;
        let out = self.value(a).zip_map(&self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    pub fn scale(&self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(&self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(&self.value(b))?;
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    /// Adds a length-`q` bias to every row of an `n×q` matrix.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (n, q) = vx.dims2();
        if vb.len() != q {
            return Err(Error::dimension("add_bias", vx.shape(), vb.shape()));
        }
        let mut out = vx.data().to_vec();
        for i in 0..n {
            for (o, b) in out[i * q..(i + 1) * q].iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let out = Tensor::from_parts(vec![n, q], out);
        drop((vx, vb));
        Ok(self.push(out, Op::AddBias { x, bias }))
    }

    /// `x · Wᵀ + b` for `x: n×p`, `W: q×p`, `b: q`; row `i` of the result
    /// is `W·xᵢ + b`.
    pub fn linear(&self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (_, p) = self.dims(x);
        let (q, p2) = self.dims(weight);
        if p != p2 {
            return Err(Error::dimension("linear", &self.shape(x), &self.shape(weight)));
        }
        if self.value(bias).len() != q {
            return Err(Error::dimension("linear", &self.shape(weight), &self.shape(bias)));
        }
        let xw = self.matmul_nt(x, weight)?;
        self.add_bias(xw, bias)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, relu, Op::Relu(x))
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    pub fn sqrt(&self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    /// Arc cosine. Inputs must already lie in `[-1, 1]`.
    pub fn acos(&self, x: Var) -> Var {
        self.unary(x, f64::acos, Op::Acos(x))
    }

    pub fn powf(&self, x: Var, exponent: f64) -> Var {
        self.unary(x, |v| v.powf(exponent), Op::Powf { x, exponent })
    }

    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn softmax_rows(&self, x: Var) -> Var {
        let out = self.value(x).softmax_rows();
        self.push(out, Op::SoftmaxRows(x))
    }

    pub fn log_softmax_rows(&self, x: Var) -> Var {
        let out = self.value(x).log_softmax_rows();
        self.push(out, Op::LogSoftmaxRows(x))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    /// Row sums of an `n×m` matrix, as an `n×1` column.
    pub fn row_sum(&self, x: Var) -> Var {
        let out = {
            let vx = self.value(x);
            let (n, _) = vx.dims2();
            let sums = (0..n).map(|i| vx.row(i).iter().sum()).collect();
            Tensor::from_parts(vec![n, 1], sums)
        };
        self.push(out, Op::RowSum(x))
    }

    /// `out[i] = x[i, columns[i]]`, as an `n×1` column.
    pub fn pick(&self, x: Var, columns: &[usize]) -> Result<Var> {
        let out = {
            let vx = self.value(x);
            let (n, m) = vx.dims2();
            if columns.len() != n {
                return Err(Error::dimension("pick", vx.shape(), &[columns.len()]));
            }
            if let Some(&c) = columns.iter().find(|&&c| c >= m) {
                return Err(Error::Contract(format!(
                    "pick: column {c} out of range for {m} columns"
                )));
            }
            let vals = columns.iter().enumerate().map(|(i, &c)| vx.get(i, c)).collect();
            Tensor::from_parts(vec![n, 1], vals)
        };
        Ok(self.push(
            out,
            Op::Pick {
                x,
                columns: columns.to_vec(),
            },
        ))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let first = parts
                .first()
                .ok_or_else(|| Error::Contract("concat_rows: no inputs".into()))?;
            let cols = self.dims(*first).1;
            let mut data = Vec::new();
            let mut rows = 0;
            for &p in parts {
                let v = self.value(p);
                if v.cols() != cols {
                    return Err(Error::dimension("concat_rows", &self.shape(*first), v.shape()));
                }
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            Tensor::from_parts(vec![rows, cols], data)
        };
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let first = parts
                .first()
                .ok_or_else(|| Error::Contract("concat_cols: no inputs".into()))?;
            let rows = self.dims(*first).0;
            let values: Vec<Ref<'_, Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
            for v in &values {
                if v.rows() != rows {
                    return Err(Error::dimension("concat_cols", &self.shape(*first), v.shape()));
                }
            }
            let cols: usize = values.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for v in &values {
                    data.extend_from_slice(v.row(i));
                }
            }
            Tensor::from_parts(vec![rows, cols], data)
        };
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let vx = self.value(x);
            let (n, m) = vx.dims2();
            if len == 0 || start + len > n {
                return Err(Error::Contract(format!(
                    "slice_rows: rows {start}..{} out of range for {n}",
                    start + len
                )));
            }
            Tensor::from_parts(vec![len, m], vx.data()[start * m..(start + len) * m].to_vec())
        };
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let vx = self.value(x);
            let (n, m) = vx.dims2();
            if len == 0 || start + len > m {
                return Err(Error::Contract(format!(
                    "slice_cols: columns {start}..{} out of range for {m}",
                    start + len
                )));
            }
            let mut data = Vec::with_capacity(n * len);
            for i in 0..n {
                data.extend_from_slice(&vx.row(i)[start..start + len]);
            }
            Tensor::from_parts(vec![n, len], data)
        };
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    /// `out[i] = x[rows[i]]`; rows may repeat or be omitted.
    pub fn gather_rows(&self, x: Var, rows: &[usize]) -> Result<Var> {
        let out = {
            let vx = self.value(x);
            let (n, m) = vx.dims2();
            if rows.is_empty() {
                return Err(Error::Contract("gather_rows: no rows requested".into()));
            }
            let mut data = Vec::with_capacity(rows.len() * m);
            for &r in rows {
                if r >= n {
                    return Err(Error::Contract(format!(
                        "gather_rows: row {r} out of range for {n}"
                    )));
                }
                data.extend_from_slice(vx.row(r));
            }
            Tensor::from_parts(vec![rows.len(), m], data)
        };
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Scales each row to unit Euclidean norm. Rows with norm below
    /// [`ROW_NORM_FLOOR`] become zero rows and pass no gradient.
    pub fn row_normalize(&self, x: Var) -> Var {
        let (out, norms) = {
            let vx = self.value(x);
            let (n, m) = vx.dims2();
            let mut data = vx.data().to_vec();
            let mut norms = Vec::with_capacity(n);
            for i in 0..n {
                let row = &mut data[i * m..(i + 1) * m];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < ROW_NORM_FLOOR {
                    row.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
                norms.push(norm);
            }
            (Tensor::from_parts(vec![n, m], data), norms)
        };
        self.push(out, Op::RowNormalize { x, norms })
    }

    /// `out[i][j] = x[i][j] · s[i] · s[j]` for square `x` and a length-`n`
    /// scale (any shape with `n` entries).
    pub fn sym_scale(&self, x: Var, scale: Var) -> Result<Var> {
        let out = {
            let (vx, vs) = (self.value(x), self.value(scale));
            let (n, m) = vx.dims2();
            if n != m || vs.len() != n {
                return Err(Error::dimension("sym_scale", vx.shape(), vs.shape()));
            }
            let s = vs.data();
            let mut data = vx.data().to_vec();
            for i in 0..n {
                for j in 0..n {
                    data[i * n + j] *= s[i] * s[j];
                }
            }
            Tensor::from_parts(vec![n, n], data)
        };
        Ok(self.push(out, Op::SymScale { x, scale }))
    }

    /// Reverse sweep from a scalar; returns the gradient of every named
    /// parameter registered on this tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let adj = self.adjoints(loss)?;
        let mut grads = Gradients::new();
        for (name, v) in self.params.borrow().iter() {
            let g = adj.get(*v);
            match grads.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    grads.insert(name.clone(), g);
                }
            }
        }
        Ok(grads)
    }

    /// Reverse sweep from a scalar, keeping the adjoint of every node.
    pub fn adjoints(&self, loss: Var) -> Result<Adjoints> {
        let nodes = self.nodes.borrow();
        if loss.0 >= nodes.len() {
            return Err(Error::Contract("backward: loss is not on this tape".into()));
        }
        if !nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward: loss must be a scalar, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            backprop_node(&nodes, node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(nodes.len(), None);
        Ok(Adjoints { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, d) in acc.data_mut().iter_mut().zip(&delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), delta)),
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
    let val = |v: Var| &nodes[v.0].value;
    let y = &node.value;
    let gd = g.data();
    let mut acc = |v: Var, delta: Vec<f64>| {
        let shape = nodes[v.0].value.shape().to_vec();
        accumulate(grads, v, &shape, delta)
    };
    let elementwise = |x: Var, f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<f64> {
        val(x)
            .data()
            .iter()
            .zip(y.data())
            .zip(gd)
            .map(|((&xv, &yv), &gv)| if gv == 0.0 { 0.0 } else { f(xv, yv, gv) })
            .collect()
    };

    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc(*a, gd.to_vec());
            acc(*b, gd.to_vec());
        }
        Op::Sub(a, b) => {
            acc(*a, gd.to_vec());
            acc(*b, gd.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a).data(), val(*b).data());
            acc(*a, gd.iter().zip(vb).map(|(g, b)| g * b).collect());
            acc(*b, gd.iter().zip(va).map(|(g, a)| g * a).collect());
        }
        Op::Affine { x, scale } => acc(*x, gd.iter().map(|v| v * scale).collect()),
        Op::MatMul(a, b) => {
            let ga = g.matmul_nt(val(*b))?;
            let gb = val(*a).matmul_tn(g)?;
            acc(*a, ga.into_data());
            acc(*b, gb.into_data());
        }
        Op::MatMulNt(a, b) => {
            // y = a·bᵀ: da = g·b, db = gᵀ·a
            let ga = g.matmul(val(*b))?;
            let gb = g.matmul_tn(val(*a))?;
            acc(*a, ga.into_data());
            acc(*b, gb.into_data());
        }
        Op::AddBias { x, bias } => {
            acc(*x, gd.to_vec());
            acc(*bias, g.col_sums().into_data());
        }
        Op::Sigmoid(x) => acc(*x, elementwise(*x, &|_, y, g| g * y * (1.0 - y))),
        Op::Tanh(x) => acc(*x, elementwise(*x, &|_, y, g| g * (1.0 - y * y))),
        Op::Relu(x) => acc(*x, elementwise(*x, &|x, _, g| if x > 0.0 { g } else { 0.0 })),
        Op::Exp(x) => acc(*x, elementwise(*x, &|_, y, g| g * y)),
        Op::Ln(x) => acc(*x, elementwise(*x, &|x, _, g| g / x)),
        Op::Sqrt(x) => acc(
            *x,
            elementwise(*x, &|_, y, g| if y > 0.0 { 0.5 * g / y } else { 0.0 }),
        ),
        Op::Acos(x) => acc(
            *x,
            elementwise(*x, &|x, _, g| {
                let s = 1.0 - x * x;
                if s > 0.0 {
                    -g / s.sqrt()
                } else {
                    0.0
                }
            }),
        ),
        Op::Powf { x, exponent } => {
            let e = *exponent;
            acc(
                *x,
                elementwise(*x, &|x, _, g| {
                    if e == 0.0 || (x == 0.0 && e < 1.0) {
                        0.0
                    } else {
                        g * e * x.powf(e - 1.0)
                    }
                }),
            )
        }
        Op::Clamp { x, lo, hi } => acc(
            *x,
            elementwise(*x, &|x, _, g| if x >= *lo && x <= *hi { g } else { 0.0 }),
        ),
        Op::SoftmaxRows(x) => {
            let (n, m) = y.dims2();
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                let (yr, gr) = (y.row(i), g.row(i));
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..m {
                    out[i * m + j] = yr[j] * (gr[j] - dot);
                }
            }
            acc(*x, out);
        }
        Op::LogSoftmaxRows(x) => {
            let (n, m) = y.dims2();
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                let (yr, gr) = (y.row(i), g.row(i));
                let total: f64 = gr.iter().sum();
                for j in 0..m {
                    out[i * m + j] = gr[j] - yr[j].exp() * total;
                }
            }
            acc(*x, out);
        }
        Op::Sum(x) => acc(*x, vec![gd[0]; val(*x).len()]),
        Op::RowSum(x) => {
            let (n, m) = val(*x).dims2();
            let mut out = Vec::with_capacity(n * m);
            for &gi in gd.iter().take(n) {
                out.extend(std::iter::repeat_n(gi, m));
            }
            acc(*x, out);
        }
        Op::Pick { x, columns } => {
            let (n, m) = val(*x).dims2();
            let mut out = vec![0.0; n * m];
            for (i, &c) in columns.iter().enumerate() {
                out[i * m + c] = gd[i];
            }
            acc(*x, out);
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = val(p).len();
                acc(p, gd[offset..offset + len].to_vec());
                offset += len;
            }
        }
        Op::ConcatCols(parts) => {
            let (n, total) = y.dims2();
            let mut offset = 0;
            for &p in parts {
                let c = val(p).cols();
                let mut out = Vec::with_capacity(n * c);
                for i in 0..n {
                    out.extend_from_slice(&gd[i * total + offset..i * total + offset + c]);
                }
                acc(p, out);
                offset += c;
            }
        }
        Op::SliceRows { x, start } => {
            let (_, m) = val(*x).dims2();
            let mut out = vec![0.0; val(*x).len()];
            out[start * m..start * m + gd.len()].copy_from_slice(gd);
            acc(*x, out);
        }
        Op::SliceCols { x, start } => {
            let (n, m) = val(*x).dims2();
            let len = y.cols();
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                out[i * m + start..i * m + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
            }
            acc(*x, out);
        }
        Op::GatherRows { x, rows } => {
            let (_, m) = val(*x).dims2();
            let mut out = vec![0.0; val(*x).len()];
            for (i, &r) in rows.iter().enumerate() {
                for j in 0..m {
                    out[r * m + j] += gd[i * m + j];
                }
            }
            acc(*x, out);
        }
        Op::RowNormalize { x, norms } => {
            let (n, m) = y.dims2();
            let mut out = vec![0.0; n * m];
            for (i, &norm) in norms.iter().enumerate() {
                if norm < ROW_NORM_FLOOR {
                    continue;
                }
                let (yr, gr) = (y.row(i), g.row(i));
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..m {
                    out[i * m + j] = (gr[j] - yr[j] * dot) / norm;
                }
            }
            acc(*x, out);
        }
        Op::SymScale { x, scale } => {
            let vx = val(*x).data();
            let s = val(*scale).data();
            let n = s.len();
            let mut gx = vec![0.0; n * n];
            let mut gs = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    let gij = gd[i * n + j];
                    gx[i * n + j] = gij * s[i] * s[j];
                    let t = gij * vx[i * n + j];
                    gs[i] += t * s[j];
                    gs[j] += t * s[i];
                }
            }
            acc(*x, gx);
            acc(*scale, gs);
        }
    }
    Ok(())
}
