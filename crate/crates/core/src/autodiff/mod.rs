//! Dense-matrix reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so parents always precede their
//! children and [`Tape::backward`] is a single reverse sweep. Scalars are
//! 1x1 matrices.

mod adam;

pub use adam::{Adam, Param};

use ndarray::{Array2, Axis};

use crate::error::{CgcError, Result};

/// Lower clamp applied before taking logarithms.
pub const LOG_EPS: f64 = 1e-10;

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
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, f64),
    /// Matrix times a 1x1 node.
    MulScalar(usize, usize),
    Sigmoid(usize),
    Relu(usize),
    Log(usize),
    Exp(usize),
    Sum(usize),
    MeanRows(usize),
    SoftmaxRow(usize),
    Cosine(usize, usize),
    ConcatCols(Vec<usize>),
    Select(usize, usize, usize),
    /// Forward value supplied externally; gradient passes through unchanged.
    StraightThrough(usize),
    NormalizeAdjacency(usize),
    /// Scalar function of the input whose (sub)gradient was fixed at forward time.
    ScalarWithGradient(usize, Array2<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Recorded computation graph. Confined to one thread of execution.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape(m: &Array2<f64>) -> (usize, usize) {
    (m.nrows(), m.ncols())
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic function on a plain matrix.
pub fn sigmoid(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(sigmoid_scalar)
}

/// Row-wise softmax on a plain matrix.
pub fn softmax_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// D^{-1/2}(A+I)D^{-1/2}, with D the row sums of A+I.
pub fn normalize_adjacency_value(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(CgcError::Shape(format!("adjacency must be square, got {n}x{}", a.ncols())));
    }
    let mut tilde = a.clone();
    for i in 0..n {
        tilde[[i, i]] += 1.0;
    }
    let inv_sqrt: Vec<f64> = tilde.sum_axis(Axis(1)).iter().map(|d| 1.0 / d.sqrt()).collect();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| tilde[[i, j]] * inv_sqrt[i] * inv_sqrt[j]))
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

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// Trainable leaf.
    pub fn var(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(&self.nodes[v.0].value)
    }

    /// Accumulated gradient, allocated by the first [`Tape::backward`] reaching `v`.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(CgcError::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(CgcError::Shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::MatMul(a.0, b.0), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::Sub(a.0, b.0), rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "hadamard")?;
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::Hadamard(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a) * s;
        let rg = self.rg(a.0);
        self.push(value, Op::Scale(a.0, s), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `s * a` where `s` is a 1x1 node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(CgcError::Shape(format!("mul_scalar: scalar operand is {:?}", self.shape(s))));
        }
        let value = self.value(a) * self.scalar(s);
        let rg = self.rg(a.0) || self.rg(s.0);
        Ok(self.push(value, Op::MulScalar(a.0, s.0), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = sigmoid(self.value(a));
        let rg = self.rg(a.0);
        self.push(value, Op::Sigmoid(a.0), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| if x < 0.0 { 0.0 } else { x });
        let rg = self.rg(a.0);
        self.push(value, Op::Relu(a.0), rg)
    }

    /// Natural log with inputs clamped to at least [`LOG_EPS`]. NaN passes
    /// through.
    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| if x < LOG_EPS { LOG_EPS.ln() } else { x.ln() });
        let rg = self.rg(a.0);
        self.push(value, Op::Log(a.0), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let rg = self.rg(a.0);
        self.push(value, Op::Exp(a.0), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a.0);
        self.push(value, Op::Sum(a.0), rg)
    }

    /// Column means as a 1 x cols row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r == 0 {
            return Err(CgcError::Shape("mean_rows of an empty matrix".into()));
        }
        let value = self.value(a).sum_axis(Axis(0)).into_shape_with_order((1, c)).expect("row") / r as f64;
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::MeanRows(a.0), rg))
    }

    pub fn softmax_row(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(a.0);
        self.push(value, Op::SoftmaxRow(a.0), rg)
    }

    /// Cosine similarity of two equally shaped matrices (flattened). A zero
    /// operand gives similarity 0 with zero gradient.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "cosine")?;
        let (va, vb) = (self.value(a), self.value(b));
        let (na, nb) = (va.iter().map(|x| x * x).sum::<f64>().sqrt(), vb.iter().map(|x| x * x).sum::<f64>().sqrt());
        let s = if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            (va * vb).sum() / (na * nb)
        };
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Array2::from_elem((1, 1), s), Op::Cosine(a.0, b.0), rg))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| CgcError::Shape("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(CgcError::Shape("concat_cols: row counts differ".into()));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("checked shapes");
        let rg = parts.iter().any(|&p| self.rg(p.0));
        Ok(self.push(value, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), rg))
    }

    /// The single entry `a[row, col]` as a 1x1 node.
    pub fn select(&mut self, a: Var, row: usize, col: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if row >= r || col >= c {
            return Err(CgcError::Shape(format!("select ({row},{col}) outside {r}x{c}")));
        }
        let value = Array2::from_elem((1, 1), self.value(a)[[row, col]]);
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::Select(a.0, row, col), rg))
    }

    /// Node whose forward value is `hard` while its gradient flows to `soft`
    /// as if it were the identity.
    pub fn straight_through(&mut self, hard: Array2<f64>, soft: Var) -> Result<Var> {
        if shape(&hard) != self.shape(soft) {
            return Err(CgcError::Shape(format!(
                "straight_through: {:?} vs {:?}",
                shape(&hard),
                self.shape(soft)
            )));
        }
        let rg = self.rg(soft.0);
        Ok(self.push(hard, Op::StraightThrough(soft.0), rg))
    }

    /// Symmetric GCN normalization D^{-1/2}(A+I)D^{-1/2}, differentiable in A.
    pub fn normalize_adjacency(&mut self, a: Var) -> Result<Var> {
        let value = normalize_adjacency_value(self.value(a))?;
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::NormalizeAdjacency(a.0), rg))
    }

    /// Scalar node `value` whose gradient with respect to `input` is `gradient`.
    /// Used for norms, whose (sub)gradients come from a decomposition.
    pub fn scalar_with_gradient(&mut self, input: Var, value: f64, gradient: Array2<f64>) -> Result<Var> {
        if shape(&gradient) != self.shape(input) {
            return Err(CgcError::Shape("scalar_with_gradient: gradient shape".into()));
        }
        let rg = self.rg(input.0);
        Ok(self.push(
            Array2::from_elem((1, 1), value),
            Op::ScalarWithGradient(input.0, gradient),
            rg,
        ))
    }

    /// Back-propagates from the scalar `loss`, adding into every reachable
    /// node's accumulated gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(CgcError::Shape(format!("backward needs a scalar loss, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], idx: usize, g: Array2<f64>) {
            match &mut grads[idx] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        acc(&mut grads, a, g.dot(&self.nodes[b].value.t()));
                    }
                    if self.rg(b) {
                        acc(&mut grads, b, self.nodes[a].value.t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        acc(&mut grads, a, g.clone());
                    }
                    if self.rg(b) {
                        acc(&mut grads, b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        acc(&mut grads, a, g.clone());
                    }
                    if self.rg(b) {
                        acc(&mut grads, b, -&g);
                    }
                }
                Op::Hadamard(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        acc(&mut grads, a, &g * &self.nodes[b].value);
                    }
                    if self.rg(b) {
                        acc(&mut grads, b, &g * &self.nodes[a].value);
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, &g * *s),
                Op::MulScalar(a, s) => {
                    let (a, s) = (*a, *s);
                    let sv = self.nodes[s].value[[0, 0]];
                    if self.rg(a) {
                        acc(&mut grads, a, &g * sv);
                    }
                    if self.rg(s) {
                        let ds = (&g * &self.nodes[a].value).sum();
                        acc(&mut grads, s, Array2::from_elem((1, 1), ds));
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, &g * &y.mapv(|s| s * (1.0 - s)));
                }
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    let mut d = g.clone();
                    d.zip_mut_with(x, |gi, &xi| {
                        if xi <= 0.0 {
                            *gi = 0.0
                        }
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Log(a) => {
                    let x = &self.nodes[*a].value;
                    let mut d = g.clone();
                    d.zip_mut_with(x, |gi, &xi| *gi = if xi > LOG_EPS { *gi / xi } else { 0.0 });
                    acc(&mut grads, *a, d);
                }
                Op::Exp(a) => acc(&mut grads, *a, &g * &node.value),
                Op::Sum(a) => {
                    let s = self.shape(Var(*a));
                    acc(&mut grads, *a, Array2::from_elem(s, g[[0, 0]]));
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.shape(Var(*a));
                    let row = g.row(0).to_owned() / r as f64;
                    let d = Array2::from_shape_fn((r, c), |(_, j)| row[j]);
                    acc(&mut grads, *a, d);
                }
                Op::SoftmaxRow(a) => {
                    let y = &node.value;
                    let mut d = Array2::zeros(y.raw_dim());
                    for ((mut drow, grow), yrow) in d.rows_mut().into_iter().zip(g.rows()).zip(y.rows()) {
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                        for ((di, gi), yi) in drow.iter_mut().zip(grow.iter()).zip(yrow.iter()) {
                            *di = yi * (gi - dot);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Cosine(a, b) => {
                    let (a, b) = (*a, *b);
                    let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                    let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if na > 0.0 && nb > 0.0 {
                        let s = node.value[[0, 0]];
                        let gs = g[[0, 0]];
                        if self.rg(a) {
                            let d = (vb / (na * nb) - va * (s / (na * na))) * gs;
                            acc(&mut grads, a, d);
                        }
                        if self.rg(b) {
                            let d = (va / (na * nb) - vb * (s / (nb * nb))) * gs;
                            acc(&mut grads, b, d);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    let parts = parts.clone();
                    for p in parts {
                        let c = self.nodes[p].value.ncols();
                        if self.rg(p) {
                            acc(&mut grads, p, g.slice(ndarray::s![.., offset..offset + c]).to_owned());
                        }
                        offset += c;
                    }
                }
                Op::Select(a, r, c) => {
                    let mut d = Array2::zeros(self.nodes[*a].value.raw_dim());
                    d[[*r, *c]] = g[[0, 0]];
                    acc(&mut grads, *a, d);
                }
                Op::StraightThrough(soft) => acc(&mut grads, *soft, g.clone()),
                Op::NormalizeAdjacency(a) => {
                    let a = *a;
                    let x = &self.nodes[a].value;
                    let y = &node.value;
                    let n = x.nrows();
                    let deg: Vec<f64> = (0..n).map(|i| x.row(i).sum() + 1.0).collect();
                    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
                    let gy = &g * y;
                    let row = gy.sum_axis(Axis(1));
                    let col = gy.sum_axis(Axis(0));
                    let d = Array2::from_shape_fn((n, n), |(i, j)| {
                        g[[i, j]] * inv_sqrt[i] * inv_sqrt[j] - 0.5 * (row[i] + col[i]) / deg[i]
                    });
                    acc(&mut grads, a, d);
                }
                Op::ScalarWithGradient(a, grad) => acc(&mut grads, *a, grad * g[[0, 0]]),
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}
