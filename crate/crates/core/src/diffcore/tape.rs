use std::borrow::Cow;

use super::tensor::{gemm_acc, pairwise_sum, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    AddConst(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Clip(Var, f64, f64),
    Max(Var, Var),
    Huber(Var, f64),
    GaussianLogProb {
        mean: Var,
        inv_var: Vec<f64>,
        action: Vec<f64>,
    },
    Mean(Var),
    Sum(Var),
    ConcatCols(Var, Var),
    NormalizeRows(Var),
}

impl Op {
    fn inputs(&self) -> impl Iterator<Item = Var> {
        let (a, b) = match *self {
            Op::Leaf => (None, None),
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Max(a, b)
            | Op::ConcatCols(a, b) => (Some(a), Some(b)),
            Op::MulConst(a, _)
            | Op::AddConst(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Clip(a, ..)
            | Op::Huber(a, _)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::NormalizeRows(a) => (Some(a), None),
            Op::GaussianLogProb { mean, .. } => (Some(mean), None),
        };
        a.into_iter().chain(b)
    }
}

#[derive(Debug)]
struct Node<'a> {
    rows: usize,
    cols: usize,
    value: Cow<'a, [f64]>,
    op: Op,
}

/// Floor applied to row norms by [`Tape::normalize_rows`].
pub const NORM_FLOOR: f64 = 1e-8;

/// Define-by-run record of array operations supporting reverse-mode
/// differentiation.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and [`Tape::backward`] walks it in reverse. Leaves may
/// borrow their data (parameters are not copied onto the tape).
///
/// Gradients of leaves persist across `backward` calls and accumulate until
/// [`Tape::zero_grad`]. Interior gradients are scratch, recomputed per call.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Cow<'a, [f64]>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that owns its data.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let (r, c) = t.shape();
        self.push(r, c, Cow::Owned(t.into_data()), Op::Leaf)
    }

    /// Records a leaf that borrows its data (no copy).
    pub fn leaf_ref(&mut self, t: &'a Tensor) -> Var {
        let (r, c) = t.shape();
        self.push(r, c, Cow::Borrowed(t.data()), Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.shape(v);
        Tensor::new(r, c, self.value(v).to_vec()).expect("node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Accumulated gradient of a leaf; zeros if no backward pass reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        let (r, c) = self.shape(v);
        match &self.leaf_grads[v.0] {
            Some(g) => Tensor::new(r, c, g.clone()).expect("grad shape matches node"),
            None => Tensor::zeros(r, c),
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension(format!(
                "{what}: shapes {}x{} and {}x{} differ",
                sa.0, sa.1, sb.0, sb.1
            )));
        }
        Ok(sa)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(r, c, Cow::Owned(out), op)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, what)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(r, c, Cow::Owned(out), op))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul: inner dimensions {k} and {k2} disagree"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(m, k, n, self.value(a), false, self.value(b), false, &mut out);
        Ok(self.push(m, n, Cow::Owned(out), Op::MatMul(a, b)))
    }

    /// `a[m×n] + bias[1×n]`, bias broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        if self.shape(bias) != (1, n) {
            let (br, bc) = self.shape(bias);
            return Err(Error::Dimension(format!(
                "add_bias: bias {br}x{bc} does not match 1x{n}"
            )));
        }
        let av = self.value(a);
        let bv = self.value(bias);
        let mut out = Vec::with_capacity(m * n);
        for row in av.chunks_exact(n.max(1)).take(m) {
            out.extend(row.iter().zip(bv).map(|(x, y)| x + y));
        }
        Ok(self.push(m, n, Cow::Owned(out), Op::AddBias(a, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Elementwise maximum. Ties select (and route gradient to) `a`.
    pub fn elementwise_max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Max(a, b), "elementwise_max", |x, y| if x >= y { x } else { y })
    }

    /// Elementwise product with a constant array of the same shape.
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(Error::Dimension("mul_const: shape mismatch".into()));
        }
        let out: Vec<f64> = self.value(a).iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let (r, cc) = c.shape();
        Ok(self.push(r, cc, Cow::Owned(out), Op::MulConst(a, c.data().to_vec())))
    }

    /// Elementwise sum with a constant array of the same shape.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(Error::Dimension("add_const: shape mismatch".into()));
        }
        let out: Vec<f64> = self.value(a).iter().zip(c.data()).map(|(x, y)| x + y).collect();
        let (r, cc) = c.shape();
        Ok(self.push(r, cc, Cow::Owned(out), Op::AddConst(a)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    /// Elementwise clamp to `[lo, hi]`. Gradient is 1 strictly inside the
    /// interval and 0 elsewhere, boundaries included.
    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(Error::Argument(format!("clip: lo {lo} > hi {hi}")));
        }
        Ok(self.unary(a, Op::Clip(a, lo, hi), |x| x.clamp(lo, hi)))
    }

    pub fn huber(&mut self, a: Var, delta: f64) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(Error::Argument(format!("huber: delta must be > 0, got {delta}")));
        }
        Ok(self.unary(a, Op::Huber(a, delta), |x| huber_value(x, delta)))
    }

    /// Row-wise diagonal Gaussian log-density of `action` under `N(mean, diag(std²))`.
    /// Returns an `m×1` column; differentiable in `mean` only.
    pub fn gaussian_log_prob(&mut self, mean: Var, std: &[f64], action: &Tensor) -> Result<Var> {
        let (m, z) = self.shape(mean);
        if std.len() != z || action.shape() != (m, z) {
            return Err(Error::Dimension(format!(
                "gaussian_log_prob: mean {m}x{z}, std {}, action {}x{}",
                std.len(),
                action.rows(),
                action.cols()
            )));
        }
        if let Some(s) = std.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::Argument(format!(
                "gaussian_log_prob: std must be positive, got {s}"
            )));
        }
        let inv_var: Vec<f64> = std.iter().map(|s| 1.0 / (s * s)).collect();
        let log_norm: f64 = std
            .iter()
            .map(|s| (2.0 * std::f64::consts::PI * s * s).ln())
            .sum();
        let mv = self.value(mean);
        let out: Vec<f64> = (0..m)
            .map(|r| {
                let mut quad = 0.0;
                for j in 0..z {
                    let d = action.data()[r * z + j] - mv[r * z + j];
                    quad += d * d * inv_var[j];
                }
                -0.5 * (quad + log_norm)
            })
            .collect();
        Ok(self.push(
            m,
            1,
            Cow::Owned(out),
            Op::GaussianLogProb {
                mean,
                inv_var,
                action: action.data().to_vec(),
            },
        ))
    }

    /// Mean of all entries (pairwise summation), as a `1×1` node.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = pairwise_sum(self.value(a)) / n as f64;
        self.push(1, 1, Cow::Owned(vec![s]), Op::Mean(a))
    }

    /// Sum of all entries (pairwise summation), as a `1×1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = pairwise_sum(self.value(a));
        self.push(1, 1, Cow::Owned(vec![s]), Op::Sum(a))
    }

    /// `[a | b]` for matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, na) = self.shape(a);
        let (mb, nb) = self.shape(b);
        if m != mb {
            return Err(Error::Dimension(format!(
                "concat_cols: row counts {m} and {mb} differ"
            )));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(m * (na + nb));
        for r in 0..m {
            out.extend_from_slice(&av[r * na..(r + 1) * na]);
            out.extend_from_slice(&bv[r * nb..(r + 1) * nb]);
        }
        Ok(self.push(m, na + nb, Cow::Owned(out), Op::ConcatCols(a, b)))
    }

    /// Projects each row onto the unit sphere: `v / max(‖v‖₂, 1e-8)`.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let av = self.value(a);
        let mut out = Vec::with_capacity(m * n);
        for row in av.chunks_exact(n.max(1)).take(m) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
            out.extend(row.iter().map(|x| x / norm));
        }
        self.push(m, n, Cow::Owned(out), Op::NormalizeRows(a))
    }

    /// Reverse pass from a scalar `loss`. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(Error::Argument(format!(
                "backward: loss must be 1x1, got {r}x{c}"
            )));
        }
        if !self.scalar(loss).is_finite() {
            return Err(Error::NonFinite(format!(
                "backward: loss is {}",
                self.scalar(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            for input in node.op.inputs() {
                if grads[input.0].is_none() {
                    grads[input.0] = Some(vec![0.0; self.nodes[input.0].value.len()]);
                }
            }
            self.propagate(id, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        // Takes the scratch buffer of an input; every input buffer was
        // allocated by the caller before this is invoked.
        macro_rules! buf {
            ($v:expr) => {
                grads[$v.0].as_mut().expect("input grad allocated")
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = node.cols;
                let av = self.value(*a);
                let bv = self.value(*b);
                gemm_acc(m, n, k, g, false, bv, true, buf!(a));
                gemm_acc(k, m, n, av, true, g, false, buf!(b));
            }
            Op::AddBias(a, b) => {
                let n = node.cols;
                buf!(a).iter_mut().zip(g).for_each(|(x, y)| *x += y);
                let gb = buf!(b);
                for row in g.chunks_exact(n.max(1)) {
                    gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
            }
            Op::Add(a, b) => {
                buf!(a).iter_mut().zip(g).for_each(|(x, y)| *x += y);
                buf!(b).iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            Op::Sub(a, b) => {
                buf!(a).iter_mut().zip(g).for_each(|(x, y)| *x += y);
                buf!(b).iter_mut().zip(g).for_each(|(x, y)| *x -= y);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                for (i, x) in buf!(a).iter_mut().enumerate() {
                    *x += g[i] * bv[i];
                }
                for (i, x) in buf!(b).iter_mut().enumerate() {
                    *x += g[i] * av[i];
                }
            }
            Op::MulConst(a, c) => {
                for (i, x) in buf!(a).iter_mut().enumerate() {
                    *x += g[i] * c[i];
                }
            }
            Op::AddConst(a) | Op::AddScalar(a) => {
                buf!(a).iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            Op::Scale(a, s) => {
                buf!(a).iter_mut().zip(g).for_each(|(x, y)| *x += y * s);
            }
            Op::Tanh(a) => {
                for (i, x) in buf!(a).iter_mut().enumerate() {
                    *x += g[i] * (1.0 - out[i] * out[i]);
                }
            }
            Op::Exp(a) => {
                for (i, x) in buf!(a).iter_mut().enumerate() {
                    *x += g[i] * out[i];
                }
            }
            Op::Clip(a, lo, hi) => {
                let av = self.value(*a);
                for (i, x) in buf!(a).iter_mut().enumerate() {
                    if *lo < av[i] && av[i] < *hi {
                        *x += g[i];
                    }
                }
            }
            Op::Max(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let first: Vec<bool> = av.iter().zip(bv).map(|(x, y)| x >= y).collect();
                for (i, x) in buf!(a).iter_mut().enumerate() {
                    if first[i] {
                        *x += g[i];
                    }
                }
                for (i, x) in buf!(b).iter_mut().enumerate() {
                    if !first[i] {
                        *x += g[i];
                    }
                }
            }
            Op::Huber(a, delta) => {
                let av = self.value(*a);
                for (i, x) in buf!(a).iter_mut().enumerate() {
                    *x += g[i] * huber_slope(av[i], *delta);
                }
            }
            Op::GaussianLogProb {
                mean,
                inv_var,
                action,
            } => {
                let z = inv_var.len();
                let mv = self.value(*mean);
                for (i, x) in buf!(mean).iter_mut().enumerate() {
                    let (r, j) = (i / z, i % z);
                    *x += g[r] * (action[i] - mv[i]) * inv_var[j];
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let d = g[0] / n;
                buf!(a).iter_mut().for_each(|x| *x += d);
            }
            Op::Sum(a) => {
                let d = g[0];
                buf!(a).iter_mut().for_each(|x| *x += d);
            }
            Op::ConcatCols(a, b) => {
                let (m, na) = self.shape(*a);
                let nb = self.shape(*b).1;
                let w = na + nb;
                let ga = buf!(a);
                for r in 0..m {
                    for c in 0..na {
                        ga[r * na + c] += g[r * w + c];
                    }
                }
                let gb = buf!(b);
                for r in 0..m {
                    for c in 0..nb {
                        gb[r * nb + c] += g[r * w + na + c];
                    }
                }
            }
            Op::NormalizeRows(a) => {
                let n = node.cols;
                let av = self.value(*a);
                let ga = buf!(a);
                for r in 0..node.rows {
                    let span = r * n..(r + 1) * n;
                    let x = &av[span.clone()];
                    let y = &out[span.clone()];
                    let gr = &g[span.clone()];
                    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > NORM_FLOOR {
                        let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..n {
                            ga[r * n + c] += (gr[c] - y[c] * dot) / norm;
                        }
                    } else {
                        for c in 0..n {
                            ga[r * n + c] += gr[c] / NORM_FLOOR;
                        }
                    }
                }
            }
        }
    }
}

pub fn huber_value(x: f64, delta: f64) -> f64 {
    let ax = x.abs();
    if ax <= delta {
        0.5 * x * x
    } else {
        delta * (ax - 0.5 * delta)
    }
}

fn huber_slope(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        x
    } else {
        delta * x.signum()
    }
}
