//! Reverse-mode automatic differentiation over dense row-major `f64` matrices.
//!
//! A [`Tape`] records operations as they run; [`Tape::backward`] walks the
//! record in reverse. Trainable weights live in a [`ParamSet`] borrowed by the
//! tape and receive their gradients in a [`Grads`] buffer, so several tapes
//! (one per input sequence, say) can accumulate into the same buffer.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat[{}x{}]{:?}", self.rows, self.cols, &self.data[..self.data.len().min(8)])
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape {rows}x{cols} vs {} values", data.len());
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self::from_vec(1, data.len(), data)
    }

    pub fn scalar(x: f64) -> Self {
        Self::from_vec(1, 1, vec![x])
    }

    pub fn filled(rows: usize, cols: usize, x: f64) -> Self {
        Self::from_vec(rows, cols, vec![x; rows * cols])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &Mat, s: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul {:?} x {:?}", self.shape(), other.shape());
        let mut out = Mat::zeros(self.rows, other.cols);
        gemm_nn(&self.data, &other.data, &mut out.data, self.rows, self.cols, other.cols);
        out
    }
}

/// c (n x m) += a (n x k) * b (k x m)
fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * m..(p + 1) * m];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c (n x m) += a (n x k) * b^T, b is (m x k)
fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            c[i * m + j] += dot(arow, brow);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ar.iter().zip(br) {
        s += x * y;
    }
    s
}

/// c (k x m) += a^T * b, a is (n x k), b is (n x m)
fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            let crow = &mut c[p * m..(p + 1) * m];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
}

static EMPTY_PARAMS: ParamSet = ParamSet {
    names: Vec::new(),
    values: Vec::new(),
};

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Mat::is_finite)
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            mats: self.values.iter().map(|v| Mat::zeros(v.rows, v.cols)).collect(),
        }
    }

    /// Scalar at flat position `flat` of parameter `id`.
    pub fn scalar_mut(&mut self, id: ParamId, flat: usize) -> &mut f64 {
        &mut self.values[id.0].data[flat]
    }
}

/// Gradient buffer shaped like a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub mats: Vec<Mat>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &Mat {
        &self.mats[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mats.iter().all(Mat::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Gather(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Tanh(Var),
    Abs(Var),
    Softmax(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    MeanPool(Var, Vec<usize>),
    Cosine(Var, Var),
    Sum(Vec<Var>),
    LogSumExp(Var),
    NegLogPick {
        x: Var,
        idx: usize,
        floor: f64,
    },
    MaskedSqDist {
        x: Var,
        target: Mat,
        rows: Vec<usize>,
    },
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

/// Gradients of the tape's nodes after [`Tape::backward`].
pub struct NodeGrads {
    grads: Vec<Option<Mat>>,
}

impl NodeGrads {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    /// A tape without trainable parameters.
    pub fn detached() -> Tape<'static> {
        Tape::new(&EMPTY_PARAMS)
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1);
        m.data[0]
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input)
    }

    /// Leaf for a parameter of the borrowed set; repeated calls share the node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.cols, bm.cols, "matmul_bt {:?} x {:?}^T", am.shape(), bm.shape());
        let mut out = Mat::zeros(am.rows, bm.rows);
        gemm_nt(&am.data, &bm.data, &mut out.data, am.rows, am.cols, bm.rows);
        self.push(out, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape());
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape());
        out.add_scaled(self.value(b), -1.0);
        self.push(out, Op::Sub(a, b))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let r = self.value(row);
        assert_eq!((1, out.cols), r.shape());
        for i in 0..out.rows {
            for (x, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *x += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// `mul * a + add`, elementwise.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = mul * *x + add);
        self.push(out, Op::Affine(a, mul))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(out, Op::Gather(table, ids.to_vec()))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xm = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let n = xm.cols;
        let mut xhat = Mat::zeros(xm.rows, n);
        let mut out = Mat::zeros(xm.rows, n);
        let mut inv_std = Vec::with_capacity(xm.rows);
        for i in 0..xm.rows {
            let row = xm.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat.data[i * n + j] = h;
                out.data[i * n + j] = h * g.data[j] + b.data[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = gelu(*x));
        self.push(out, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = x.tanh());
        self.push(out, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = x.abs());
        self.push(out, Op::Abs(a))
    }

    /// Row-wise normalized exponentials.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for i in 0..out.rows {
            let row = out.row_mut(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                // every entry masked out
                row.iter_mut().for_each(|x| *x = 0.0);
                continue;
            }
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                sum += *x;
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        assert!(start + len <= m.cols);
        let mut out = Mat::zeros(m.rows, len);
        for i in 0..m.rows {
            out.row_mut(i).copy_from_slice(&m.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows);
            for i in 0..rows {
                out.row_mut(i)[off..off + m.cols].copy_from_slice(m.row(i));
            }
            off += m.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Mean over rows `rows` of `a`, as a `1 x cols` row. All zero if `rows` is empty.
    pub fn mean_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let m = self.value(a);
        let mut out = Mat::zeros(1, m.cols);
        if !rows.is_empty() {
            for &r in rows {
                for (o, x) in out.data.iter_mut().zip(m.row(r)) {
                    *o += x;
                }
            }
            let k = rows.len() as f64;
            out.data.iter_mut().for_each(|o| *o /= k);
        }
        self.push(out, Op::MeanPool(a, rows.to_vec()))
    }

    /// Cosine similarity of two same-shaped tensors (flattened); 0 if either is zero.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.len(), bm.len());
        let c = crate::links::cosine(&am.data, &bm.data);
        self.push(Mat::scalar(c), Op::Cosine(a, b))
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            out.add_assign(self.value(p));
        }
        self.push(out, Op::Sum(parts.to_vec()))
    }

    /// `log(sum(exp(a)))` over all entries.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mx = m.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = m.data.iter().map(|x| (x - mx).exp()).sum();
        self.push(Mat::scalar(mx + s.ln()), Op::LogSumExp(a))
    }

    /// `-ln(max(a[idx], floor))`.
    pub fn neg_log_pick(&mut self, a: Var, idx: usize, floor: f64) -> Var {
        let p = self.value(a).data[idx];
        self.push(Mat::scalar(-(p.max(floor)).ln()), Op::NegLogPick { x: a, idx, floor })
    }

    /// Sum of squared differences to a constant target over the given rows.
    pub fn masked_sq_dist(&mut self, a: Var, target: &Mat, rows: &[usize]) -> Var {
        let m = self.value(a);
        assert_eq!(m.cols, target.cols);
        let mut s = 0.0;
        for &r in rows {
            for (x, t) in m.row(r).iter().zip(target.row(r)) {
                s += (x - t) * (x - t);
            }
        }
        self.push(
            Mat::scalar(s),
            Op::MaskedSqDist {
                x: a,
                target: target.clone(),
                rows: rows.to_vec(),
            },
        )
    }

    /// Backpropagates `seed` (shaped like `root`) through the tape. Parameter
    /// gradients are added to `param_grads`; other node gradients are returned.
    pub fn backward(&self, root: Var, seed: Mat, param_grads: &mut Grads) -> NodeGrads {
        assert_eq!(seed.shape(), self.value(root).shape());
        assert_eq!(param_grads.mats.len(), self.params.len());
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);

        fn acc<'g>(grads: &'g mut [Option<Mat>], v: Var, rows: usize, cols: usize) -> &'g mut Mat {
            grads[v.0].get_or_insert_with(|| Mat::zeros(rows, cols))
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => param_grads.mats[id.0].add_assign(&g),
                Op::MatMul(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let da = acc(&mut grads, *a, am.rows, am.cols);
                    gemm_nt(&g.data, &bm.data, &mut da.data, g.rows, g.cols, bm.rows);
                    let db = acc(&mut grads, *b, bm.rows, bm.cols);
                    gemm_tn(&am.data, &g.data, &mut db.data, am.rows, am.cols, g.cols);
                }
                Op::MatMulBt(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let da = acc(&mut grads, *a, am.rows, am.cols);
                    gemm_nn(&g.data, &bm.data, &mut da.data, g.rows, g.cols, bm.cols);
                    let db = acc(&mut grads, *b, bm.rows, bm.cols);
                    gemm_tn(&g.data, &am.data, &mut db.data, g.rows, g.cols, am.cols);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.rows, g.cols).add_assign(&g);
                    acc(&mut grads, *b, g.rows, g.cols).add_assign(&g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.rows, g.cols).add_assign(&g);
                    acc(&mut grads, *b, g.rows, g.cols).add_scaled(&g, -1.0);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *a, g.rows, g.cols).add_assign(&g);
                    let dr = acc(&mut grads, *row, 1, g.cols);
                    for r in 0..g.rows {
                        for (d, x) in dr.data.iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                }
                Op::Affine(a, mul) => {
                    acc(&mut grads, *a, g.rows, g.cols).add_scaled(&g, *mul);
                }
                Op::Gather(table, ids) => {
                    let t = self.value(*table);
                    // Straight into the parameter buffer: avoids a dense
                    // vocabulary-sized intermediate per tape.
                    let dt = match self.nodes[table.0].op {
                        Op::Param(id) => &mut param_grads.mats[id.0],
                        _ => acc(&mut grads, *table, t.rows, t.cols),
                    };
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, x) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let n = g.cols;
                    let gm = self.value(*gamma).data.clone();
                    {
                        let dg = acc(&mut grads, *gamma, 1, n);
                        for r in 0..g.rows {
                            for j in 0..n {
                                dg.data[j] += g.data[r * n + j] * xhat.data[r * n + j];
                            }
                        }
                    }
                    {
                        let db = acc(&mut grads, *beta, 1, n);
                        for r in 0..g.rows {
                            for (d, x) in db.data.iter_mut().zip(g.row(r)) {
                                *d += x;
                            }
                        }
                    }
                    let dx = acc(&mut grads, *x, g.rows, n);
                    let mut dxhat = vec![0.0; n];
                    for r in 0..g.rows {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..n {
                            dxhat[j] = g.data[r * n + j] * gm[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xhat.data[r * n + j];
                        }
                        let k = inv_std[r] / n as f64;
                        for j in 0..n {
                            dx.data[r * n + j] +=
                                k * (n as f64 * dxhat[j] - s1 - xhat.data[r * n + j] * s2);
                        }
                    }
                }
                Op::Gelu(a) => {
                    let am = self.value(*a);
                    let da = acc(&mut grads, *a, g.rows, g.cols);
                    for ((d, gv), x) in da.data.iter_mut().zip(&g.data).zip(&am.data) {
                        *d += gv * gelu_grad(*x);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    let da = acc(&mut grads, *a, g.rows, g.cols);
                    for ((d, gv), yv) in da.data.iter_mut().zip(&g.data).zip(&y.data) {
                        *d += gv * (1.0 - yv * yv);
                    }
                }
                Op::Abs(a) => {
                    let am = self.value(*a);
                    let da = acc(&mut grads, *a, g.rows, g.cols);
                    for ((d, gv), x) in da.data.iter_mut().zip(&g.data).zip(&am.data) {
                        if *x > 0.0 {
                            *d += gv;
                        } else if *x < 0.0 {
                            *d -= gv;
                        }
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let da = acc(&mut grads, *a, g.rows, g.cols);
                    for r in 0..g.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (j, d) in da.row_mut(r).iter_mut().enumerate() {
                            *d += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::SliceCols(a, start) => {
                    let am = self.value(*a);
                    let da = acc(&mut grads, *a, am.rows, am.cols);
                    for r in 0..g.rows {
                        for (d, x) in da.row_mut(r)[*start..*start + g.cols].iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (pr, pc) = self.value(*p).shape();
                        let dp = acc(&mut grads, *p, pr, pc);
                        for r in 0..pr {
                            for (d, x) in dp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + pc]) {
                                *d += x;
                            }
                        }
                        off += pc;
                    }
                }
                Op::MeanPool(a, rows) => {
                    if rows.is_empty() {
                        continue;
                    }
                    let am = self.value(*a);
                    let da = acc(&mut grads, *a, am.rows, am.cols);
                    let k = 1.0 / rows.len() as f64;
                    for &r in rows {
                        for (d, x) in da.row_mut(r).iter_mut().zip(&g.data) {
                            *d += k * x;
                        }
                    }
                }
                Op::Cosine(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let c = node.value.as_ref().unwrap().data[0];
                    let na = am.data.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = bm.data.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if na == 0.0 || nb == 0.0 {
                        continue;
                    }
                    let gs = g.data[0];
                    let (ar, ac) = am.shape();
                    let (br, bc) = bm.shape();
                    let mut ga = Mat::zeros(ar, ac);
                    let mut gb = Mat::zeros(br, bc);
                    for j in 0..am.len() {
                        let (x, y) = (am.data[j], bm.data[j]);
                        ga.data[j] = gs * (y / (na * nb) - c * x / (na * na));
                        gb.data[j] = gs * (x / (na * nb) - c * y / (nb * nb));
                    }
                    acc(&mut grads, *a, ar, ac).add_assign(&ga);
                    acc(&mut grads, *b, br, bc).add_assign(&gb);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        acc(&mut grads, *p, g.rows, g.cols).add_assign(&g);
                    }
                }
                Op::LogSumExp(a) => {
                    let am = self.value(*a);
                    let lse = node.value.as_ref().unwrap().data[0];
                    let gs = g.data[0];
                    let da = acc(&mut grads, *a, am.rows, am.cols);
                    for (d, x) in da.data.iter_mut().zip(&am.data) {
                        *d += gs * (x - lse).exp();
                    }
                }
                Op::NegLogPick { x, idx, floor } => {
                    let xm = self.value(*x);
                    let p = xm.data[*idx];
                    let da = acc(&mut grads, *x, xm.rows, xm.cols);
                    if p > *floor {
                        da.data[*idx] -= g.data[0] / p;
                    }
                }
                Op::MaskedSqDist { x, target, rows } => {
                    let xm = self.value(*x);
                    let gs = g.data[0];
                    let da = acc(&mut grads, *x, xm.rows, xm.cols);
                    for &r in rows {
                        for j in 0..xm.cols {
                            da.data[r * xm.cols + j] += gs * 2.0 * (xm.get(r, j) - target.get(r, j));
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        NodeGrads { grads }
    }
}
