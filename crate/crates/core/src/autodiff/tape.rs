use super::kernels::{self, mm, mm_at, mm_bt};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operation kinds accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    Scale(f64),
}

impl ElementwiseOp {
    fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul)
    }
}

/// Which operand of a binary op is repeated along leading axes.
#[derive(Clone, Copy, Debug)]
enum Broadcast {
    None,
    Lhs,
    Rhs,
}

#[derive(Clone, Copy, Debug)]
struct MatLayout {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_stride: usize,
    b_stride: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Map { x: Var, deriv: fn(f64) -> f64 },
    MatMul(Var, Var, MatLayout),
    TransposeLast2(Var),
    Reshape(Var),
    SliceLast { x: Var, start: usize },
    ConcatLast(Vec<Var>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    MaskedBce { y_hat: Var, mask: Vec<i8>, included: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Clamp applied to probabilities inside the masked binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

/// Append-only record of tensor operations supporting reverse-mode differentiation.
///
/// Leaf gradients accumulate across calls to [`Tape::backward`]; call
/// [`Tape::zero_grad`] to reset them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    /// Records a trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, present after a backward pass.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- pointwise -------------------------------------------------------

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        match (op.is_binary(), b) {
            (true, None) => Err(Error::InvalidArgument(format!(
                "{op:?} needs a second operand"
            ))),
            (false, Some(_)) => Err(Error::InvalidArgument(format!(
                "{op:?} takes a single operand"
            ))),
            (true, Some(b)) => match op {
                ElementwiseOp::Add => self.add(a, b),
                ElementwiseOp::Sub => self.sub(a, b),
                _ => self.mul(a, b),
            },
            (false, None) => Ok(match op {
                ElementwiseOp::Sigmoid => self.sigmoid(a),
                ElementwiseOp::Tanh => self.tanh(a),
                ElementwiseOp::Relu => self.relu(a),
                ElementwiseOp::Scale(c) => self.scale(a, c),
                _ => unreachable!(),
            }),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let bc = broadcast_kind(ta.shape(), tb.shape())
            .ok_or_else(|| Error::shape(name, ta.shape(), tb.shape()))?;
        let (da, db) = (ta.data(), tb.data());
        let (shape, data): (Vec<usize>, Vec<f64>) = match bc {
            Broadcast::None => (
                ta.shape().to_vec(),
                da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::Rhs => (
                ta.shape().to_vec(),
                da.iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, db[i % db.len()]))
                    .collect(),
            ),
            Broadcast::Lhs => (
                tb.shape().to_vec(),
                db.iter()
                    .enumerate()
                    .map(|(i, &y)| f(da[i % da.len()], y))
                    .collect(),
            ),
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, make(a, b), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Applies an arbitrary scalar function with a caller-supplied derivative.
    pub fn map(&mut self, x: Var, f: fn(f64) -> f64, deriv: fn(f64) -> f64) -> Var {
        self.unary(x, f, Op::Map { x, deriv })
    }

    // ---- linear algebra and layout ---------------------------------------

    /// Matrix product over rank-2 or batched rank-3 operands. A rank-2 operand
    /// paired with a rank-3 one is shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let err = || Error::shape("matmul", &sa, &sb);
        let (layout, out_shape) = match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => (
                MatLayout { batch: 1, m, k, n, a_stride: 0, b_stride: 0 },
                vec![m, n],
            ),
            (&[bt, m, k], &[k2, n]) if k == k2 => (
                MatLayout { batch: bt, m, k, n, a_stride: m * k, b_stride: 0 },
                vec![bt, m, n],
            ),
            (&[m, k], &[bt, k2, n]) if k == k2 => (
                MatLayout { batch: bt, m, k, n, a_stride: 0, b_stride: k * n },
                vec![bt, m, n],
            ),
            (&[bt, m, k], &[bt2, k2, n]) if k == k2 && bt == bt2 => (
                MatLayout { batch: bt, m, k, n, a_stride: m * k, b_stride: k * n },
                vec![bt, m, n],
            ),
            _ => return Err(err()),
        };
        let MatLayout { batch, m, k, n, a_stride, b_stride } = layout;
        let mut out = vec![0.0; batch * m * n];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                mm(
                    &da[i * a_stride..i * a_stride + m * k],
                    &db[i * b_stride..i * b_stride + k * n],
                    m,
                    k,
                    n,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MatMul(a, b, layout), rg))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (batch, r, c) = match shape.as_slice() {
            &[r, c] => (1, r, c),
            &[b, r, c] => (b, r, c),
            s => {
                return Err(Error::InvalidArgument(format!(
                    "transpose expects rank 2 or 3, got shape {s:?}"
                )))
            }
        };
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        transpose_into(src, batch, r, c, &mut out);
        let mut new_shape = shape.clone();
        let rank = new_shape.len();
        new_shape.swap(rank - 2, rank - 1);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::TransposeLast2(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let last = t.last_dim();
        if len == 0 || start + len > last {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} out of range for last axis of {:?}",
                start + len,
                t.shape()
            )));
        }
        let data: Vec<f64> = t
            .data()
            .chunks_exact(last)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceLast { x, start }, rg))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let lead = {
            let s = self.shape(*first);
            s[..s.len() - 1].to_vec()
        };
        for p in parts {
            let s = self.shape(*p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat_last", self.shape(*first), s));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatLast(parts.to_vec()), rg))
    }

    // ---- normalisation ---------------------------------------------------

    /// Softmax over the last axis, stabilised by subtracting the row maximum.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(value, Op::Softmax(x), rg)
    }

    /// Normalises each row of the last axis to zero mean and unit population
    /// variance, then applies `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let t = self.value(x);
        let n = t.last_dim();
        for p in [gamma, beta] {
            if self.shape(p) != [n] {
                return Err(Error::shape("layer_norm", t.shape(), self.shape(p)));
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = t.len() / n;
        let mut xhat = vec![0.0; t.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; t.len()];
        for (r, row) in t.data().chunks_exact(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    // ---- reductions and losses -------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Binary cross-entropy restricted to entries whose mask is non-zero.
    ///
    /// Mask `+1` marks a favourable answer (target 1), `-1` a non-favourable one
    /// (target 0) and `0` a key the user was never asked; those entries are
    /// excluded. The loss is the mean over included entries, `0` if there are none.
    pub fn masked_bce(&mut self, y_hat: Var, mask: &[i8]) -> Result<Var> {
        let t = self.value(y_hat);
        if mask.len() != t.len() {
            return Err(Error::shape("masked_bce", t.shape(), &[mask.len()]));
        }
        validate_mask(mask)?;
        let mut total = 0.0;
        let mut included = 0usize;
        for (&p, &m) in t.data().iter().zip(mask) {
            if m == 0 {
                continue;
            }
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total -= if m > 0 { p.ln() } else { (1.0 - p).ln() };
            included += 1;
        }
        let loss = if included == 0 { 0.0 } else { total / included as f64 };
        let rg = self.rg(&[y_hat]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedBce {
                y_hat,
                mask: mask.to_vec(),
                included,
            },
            rg,
        ))
    }

    // ---- reverse pass ----------------------------------------------------

    /// Propagates d(loss)/d(·) back through the tape, adding into the stored
    /// gradient of every trainable leaf. Leaves the loss does not depend on
    /// receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let Tape { nodes, grads } = self;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let val = |v: Var| nodes[v.0].value.data();
            let needs = |v: Var| nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    let slot = grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                    slot.iter_mut().zip(&g).for_each(|(s, d)| *s += d);
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if needs(*a) {
                        let ga = slot(&mut adj, nodes, *a);
                        reduce_into(ga, &g, |_| 1.0);
                    }
                    if needs(*b) {
                        let gb = slot(&mut adj, nodes, *b);
                        reduce_into(gb, &g, |_| sign);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        let vb = val(*b);
                        let ga = slot(&mut adj, nodes, *a);
                        reduce_into(ga, &g, |i| vb[i % vb.len()]);
                    }
                    if needs(*b) {
                        let va = val(*a);
                        let gb = slot(&mut adj, nodes, *b);
                        reduce_into(gb, &g, |i| va[i % va.len()]);
                    }
                }
                Op::Scale(x, c) => {
                    let gx = slot(&mut adj, nodes, *x);
                    gx.iter_mut().zip(&g).for_each(|(s, d)| *s += d * c);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let gx = slot(&mut adj, nodes, *x);
                    for j in 0..g.len() {
                        gx[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let gx = slot(&mut adj, nodes, *x);
                    for j in 0..g.len() {
                        gx[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                }
                Op::Relu(x) => {
                    let y = node.value.data();
                    let gx = slot(&mut adj, nodes, *x);
                    for j in 0..g.len() {
                        if y[j] > 0.0 {
                            gx[j] += g[j];
                        }
                    }
                }
                Op::Map { x, deriv } => {
                    let xv = val(*x);
                    let gx = slot(&mut adj, nodes, *x);
                    for j in 0..g.len() {
                        gx[j] += g[j] * deriv(xv[j]);
                    }
                }
                Op::MatMul(a, b, l) => {
                    let MatLayout { batch, m, k, n, a_stride, b_stride } = *l;
                    if needs(*a) {
                        let vb = val(*b);
                        let ga = slot(&mut adj, nodes, *a);
                        for t in 0..batch {
                            mm_bt(
                                &g[t * m * n..(t + 1) * m * n],
                                &vb[t * b_stride..t * b_stride + k * n],
                                m,
                                n,
                                k,
                                &mut ga[t * a_stride..t * a_stride + m * k],
                            );
                        }
                    }
                    if needs(*b) {
                        let va = val(*a);
                        let gb = slot(&mut adj, nodes, *b);
                        for t in 0..batch {
                            mm_at(
                                &va[t * a_stride..t * a_stride + m * k],
                                &g[t * m * n..(t + 1) * m * n],
                                k,
                                m,
                                n,
                                &mut gb[t * b_stride..t * b_stride + k * n],
                            );
                        }
                    }
                }
                Op::TransposeLast2(x) => {
                    // Transposing the output-shaped gradient restores the input layout.
                    let s = node.value.shape();
                    let (batch, r, c) = match *s {
                        [r, c] => (1, r, c),
                        [b, r, c] => (b, r, c),
                        _ => unreachable!(),
                    };
                    let mut back = vec![0.0; g.len()];
                    transpose_into(&g, batch, r, c, &mut back);
                    let gx = slot(&mut adj, nodes, *x);
                    gx.iter_mut().zip(&back).for_each(|(s, d)| *s += d);
                }
                Op::Reshape(x) => {
                    let gx = slot(&mut adj, nodes, *x);
                    gx.iter_mut().zip(&g).for_each(|(s, d)| *s += d);
                }
                Op::SliceLast { x, start } => {
                    let len = node.value.last_dim();
                    let full = nodes[x.0].value.last_dim();
                    let gx = slot(&mut adj, nodes, *x);
                    for (r, row) in g.chunks_exact(len).enumerate() {
                        let dst = &mut gx[r * full + start..r * full + start + len];
                        dst.iter_mut().zip(row).for_each(|(s, d)| *s += d);
                    }
                }
                Op::ConcatLast(parts) => {
                    let total = node.value.last_dim();
                    let mut offset = 0;
                    for p in parts {
                        let w = nodes[p.0].value.last_dim();
                        if needs(*p) {
                            let gp = slot(&mut adj, nodes, *p);
                            for (r, row) in g.chunks_exact(total).enumerate() {
                                let src = &row[offset..offset + w];
                                let dst = &mut gp[r * w..(r + 1) * w];
                                dst.iter_mut().zip(src).for_each(|(s, d)| *s += d);
                            }
                        }
                        offset += w;
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let n = node.value.last_dim();
                    let gx = slot(&mut adj, nodes, *x);
                    for ((yr, gr), dst) in y
                        .chunks_exact(n)
                        .zip(g.chunks_exact(n))
                        .zip(gx.chunks_exact_mut(n))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dst[j] += yr[j] * (gr[j] - dot);
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
                    let n = node.value.last_dim();
                    let gam = val(*gamma);
                    if needs(*gamma) {
                        let gg = slot(&mut adj, nodes, *gamma);
                        for (gr, hr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                            for j in 0..n {
                                gg[j] += gr[j] * hr[j];
                            }
                        }
                    }
                    if needs(*beta) {
                        let gb = slot(&mut adj, nodes, *beta);
                        for gr in g.chunks_exact(n) {
                            gb.iter_mut().zip(gr).for_each(|(s, d)| *s += d);
                        }
                    }
                    if needs(*x) {
                        let gx = slot(&mut adj, nodes, *x);
                        let nf = n as f64;
                        let mut dh = vec![0.0; n];
                        for (r, (gr, hr)) in
                            g.chunks_exact(n).zip(xhat.chunks_exact(n)).enumerate()
                        {
                            for j in 0..n {
                                dh[j] = gr[j] * gam[j];
                            }
                            let sum_dh: f64 = dh.iter().sum();
                            let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                            let dst = &mut gx[r * n..(r + 1) * n];
                            for j in 0..n {
                                dst[j] += inv_std[r] / nf * (nf * dh[j] - sum_dh - hr[j] * sum_dh_h);
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    let gx = slot(&mut adj, nodes, *x);
                    gx.iter_mut().for_each(|s| *s += g[0]);
                }
                Op::Mean(x) => {
                    let gx = slot(&mut adj, nodes, *x);
                    let d = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|s| *s += d);
                }
                Op::MaskedBce {
                    y_hat,
                    mask,
                    included,
                } => {
                    if *included == 0 {
                        continue;
                    }
                    let p = val(*y_hat);
                    let scale = g[0] / *included as f64;
                    let gy = slot(&mut adj, nodes, *y_hat);
                    for j in 0..mask.len() {
                        let pj = p[j];
                        // The clamp is flat outside its range; NaN still propagates.
                        #[allow(clippy::manual_range_contains)]
                        let clamped = pj < BCE_CLAMP || pj > 1.0 - BCE_CLAMP;
                        if mask[j] == 0 || clamped {
                            continue;
                        }
                        gy[j] += if mask[j] > 0 { -scale / pj } else { scale / (1.0 - pj) };
                    }
                }
            }
        }

        for (node, g) in nodes.iter().zip(grads.iter_mut()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && g.is_none() {
                *g = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }
}

/// Returns how `b` lines up against `a`: equal shapes, or the smaller one
/// (after dropping its leading unit axes) matching the other's trailing axes.
fn broadcast_kind(a: &[usize], b: &[usize]) -> Option<Broadcast> {
    if a == b {
        return Some(Broadcast::None);
    }
    let strip = |s: &[usize]| -> Vec<usize> {
        let first = s.iter().position(|&d| d != 1).unwrap_or(s.len());
        s[first..].to_vec()
    };
    let (na, nb): (usize, usize) = (a.iter().product(), b.iter().product());
    if nb <= na && a.ends_with(&strip(b)) && b.len() <= a.len() {
        Some(Broadcast::Rhs)
    } else if na < nb && b.ends_with(&strip(a)) && a.len() <= b.len() {
        Some(Broadcast::Lhs)
    } else {
        None
    }
}

/// Gradient buffer for `v`, created as zeros on first use.
fn slot<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
}

/// Adds `g[i] * factor(i)` into `dst[i % dst.len()]`, summing over repeats
/// when `dst` was broadcast.
fn reduce_into(dst: &mut [f64], g: &[f64], factor: impl Fn(usize) -> f64) {
    let n = dst.len();
    for (i, &gi) in g.iter().enumerate() {
        dst[i % n] += gi * factor(i);
    }
}

fn transpose_into(src: &[f64], batch: usize, r: usize, c: usize, out: &mut [f64]) {
    for t in 0..batch {
        let s = &src[t * r * c..(t + 1) * r * c];
        let o = &mut out[t * r * c..(t + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                o[j * r + i] = s[i * c + j];
            }
        }
    }
}

pub(crate) fn validate_mask(mask: &[i8]) -> Result<()> {
    if let Some((i, &m)) = mask.iter().enumerate().find(|(_, &m)| !(-1..=1).contains(&m)) {
        return Err(Error::Invariant {
            invariant: "mask_values",
            detail: format!("mask entry {i} is {m}, expected one of -1, 0, 1"),
        });
    }
    Ok(())
}
