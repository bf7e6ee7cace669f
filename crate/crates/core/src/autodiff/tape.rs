use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Transpose(Var),
    SwapLeading(Var),
    Reshape(Var),
    Softmax { x: Var },
    LayerNorm { x: Var, gain: Var, shift: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Sum(Var),
    AbsSum(Var),
    Mse(Var, Var),
    Slice { x: Var, axis: usize, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Eager reverse-mode tape. Every forward op appends one node; creation
/// order is a valid topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients for the leaves passed to [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct GradientSet {
    leaves: Vec<Var>,
    grads: Vec<Tensor>,
    connected: Vec<bool>,
}

impl GradientSet {
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.leaves
            .iter()
            .position(|&v| v == leaf)
            .map(|i| &self.grads[i])
    }

    /// False when the loss does not depend on `leaf`; its gradient is zero.
    pub fn is_connected(&self, leaf: Var) -> bool {
        self.leaves
            .iter()
            .position(|&v| v == leaf)
            .is_some_and(|i| self.connected[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.leaves.iter().copied().zip(self.grads.iter())
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.grads
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// `c (+)= op(a) · op(b)` for row-major operands. `a` is `m×k` (stored
/// `k×m` when `ta`), `b` is `k×n` (stored `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches.
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

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let t = (C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// `(outer, extent, inner)` strides for an axis.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf: gradients flow to it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_raw(Op::Leaf, t, true)
    }

    /// Constant input: never differentiated, and nothing downstream of
    /// constants alone is differentiated either.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(Op::Leaf, t, false)
    }

    fn push_raw(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, op: Op, inputs: &[Var], value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFiniteValue { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(op, value, requires_grad))
    }

    // ── forward primitives ───────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let value = Tensor::new([m, n], out)?;
        self.push("matmul", Op::MatMul(a, b), &[a, b], value)
    }

    /// Batched product of `[B, M, K]` and `[B, K, N]` (or `[B, N, K]` when
    /// `transpose_b`).
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && {
            if transpose_b {
                sa[2] == sb[2]
            } else {
                sa[2] == sb[1]
            }
        };
        if !ok {
            return Err(Error::shape(
                "batch_matmul",
                format!("{sa:?} x {sb:?} (transpose_b = {transpose_b})"),
            ));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for p in 0..batch {
            gemm(
                m,
                k,
                n,
                &da[p * m * k..],
                false,
                &db[p * k * n..],
                transpose_b,
                &mut out[p * m * n..],
                0.0,
            );
        }
        let value = Tensor::new([batch, m, n], out)?;
        self.push("batch_matmul", Op::BatchMatMul { a, b, transpose_b }, &[a, b], value)
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", Op::Add(a, b), &[a, b], v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", Op::Sub(a, b), &[a, b], v)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", Op::Mul(a, b), &[a, b], v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| c * x);
        self.push("scale", Op::Scale(a, c), &[a], v)
    }

    /// Adds a rank-1 `bias` along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.shape().last().copied().unwrap_or(1);
        if tb.rank() != 1 || tb.numel() != n {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", tx.shape(), tb.shape())));
        }
        let b = tb.data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        let v = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("add_bias", Op::AddBias(x, bias), &[x, bias], v)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", t.shape())));
        }
        let v = transpose2(t.data(), t.shape()[0], t.shape()[1]);
        let v = Tensor::new([t.shape()[1], t.shape()[0]], v)?;
        self.push("transpose", Op::Transpose(x), &[x], v)
    }

    /// `[A, B, C] -> [B, A, C]`.
    pub fn swap_leading(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 3 {
            return Err(Error::shape("swap_leading", format!("{:?}", t.shape())));
        }
        let s = t.shape();
        let v = swap_leading(t.data(), s[0], s[1], s[2]);
        let v = Tensor::new([s[1], s[0], s[2]], v)?;
        self.push("swap_leading", Op::SwapLeading(x), &[x], v)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", Op::Reshape(x), &[x], v)
    }

    /// Softmax over the last axis. With `mask_diagonal`, the last two
    /// extents must agree and entry `(i, i)` of every square block is
    /// excluded from the normalization, so its weight is exactly zero.
    pub fn softmax(&mut self, x: Var, mask_diagonal: bool) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.is_empty() {
            return Err(Error::shape("softmax", "scalar input"));
        }
        let m = s[s.len() - 1];
        let n = if s.len() >= 2 { s[s.len() - 2] } else { 1 };
        if mask_diagonal && (s.len() < 2 || n != m) {
            return Err(Error::shape("softmax", format!("diagonal mask needs square blocks, got {s:?}")));
        }
        if mask_diagonal && m < 2 {
            return Err(Error::shape("softmax", "every entry of a 1x1 block is masked"));
        }
        let mut out = vec![0.0; t.numel()];
        for (r, (row, o)) in t.data().chunks(m).zip(out.chunks_mut(m)).enumerate() {
            let skip = if mask_diagonal { Some(r % n) } else { None };
            let max = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| Some(j) != skip)
                .fold(f64::NEG_INFINITY, |a, (_, &v)| a.max(v));
            let mut total = 0.0;
            for (j, (&v, o)) in row.iter().zip(o.iter_mut()).enumerate() {
                if Some(j) != skip {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            o.iter_mut().for_each(|v| *v /= total);
        }
        let v = Tensor::new(s.to_vec(), out)?;
        self.push("softmax", Op::Softmax { x }, &[x], v)
    }

    /// Layer normalization over the last axis with population variance
    /// and `LAYER_NORM_EPS`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let t = self.value(x);
        let n = t.shape().last().copied().unwrap_or(1);
        let (g, b) = (self.value(gain), self.value(shift));
        if g.rank() != 1 || g.numel() != n || b.shape() != g.shape() {
            return Err(Error::shape(
                "layer_norm",
                format!("input {:?}, gain {:?}, shift {:?}", t.shape(), g.shape(), b.shape()),
            ));
        }
        let rows = t.numel() / n;
        let mut xhat = vec![0.0; t.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; t.numel()];
        for r in 0..rows {
            let row = &t.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        self.push(
            "layer_norm",
            Op::LayerNorm { x, gain, shift, xhat, inv_std },
            &[x, gain, shift],
            v,
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(gelu);
        self.push("gelu", Op::Gelu(x), &[x], v)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).data().iter().sum());
        self.push("sum", Op::Sum(x), &[x], v)
    }

    /// `Σ |x|`.
    pub fn abs_sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).data().iter().map(|v| v.abs()).sum());
        self.push("abs_sum", Op::AbsSum(x), &[x], v)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.zip_same("mse", a, b, |x, y| x - y)?;
        let n = d.numel().max(1) as f64;
        let v = Tensor::scalar(d.data().iter().map(|e| e * e).sum::<f64>() / n);
        self.push("mse", Op::Mse(a, b), &[a, b], v)
    }

    /// Sub-range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::shape("slice", format!("{s:?} axis {axis} [{start}, {})", start + len)));
        }
        let (outer, extent, inner) = axis_split(s, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let v = Tensor::new(shape, out)?;
        self.push("slice", Op::Slice { x, axis, start }, &[x], v)
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let ext = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(shape, out)?;
        self.push("concat", Op::Concat { parts: parts.to_vec(), axis }, parts, v)
    }

    // ── reverse pass ─────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss`. Leaves the loss does not depend
    /// on get a zero gradient and are flagged as disconnected.
    pub fn backward(&self, loss: Var, leaves: &[Var]) -> Result<GradientSet> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NotScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }

        let mut out = Vec::with_capacity(leaves.len());
        let mut connected = Vec::with_capacity(leaves.len());
        for &leaf in leaves {
            let shape = self.shape(leaf).to_vec();
            match grads.get_mut(leaf.0).and_then(Option::take) {
                Some(g) => {
                    out.push(Tensor::new(shape, g)?);
                    connected.push(true);
                    // a leaf listed twice still reports the same gradient
                    grads[leaf.0] = Some(out.last().unwrap().data().to_vec());
                }
                None => {
                    out.push(Tensor::zeros(shape));
                    connected.push(false);
                }
            }
        }
        Ok(GradientSet {
            leaves: leaves.to_vec(),
            grads: out,
            connected,
        })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if let Some(da) = self.slot(grads, *a) {
                    gemm(m, n, k, g, false, self.value(*b).data(), true, da, 1.0);
                }
                if let Some(db) = self.slot(grads, *b) {
                    gemm(k, m, n, self.value(*a).data(), true, g, false, db, 1.0);
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = if *transpose_b { sb[1] } else { sb[2] };
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.slot(grads, *a) {
                    for p in 0..batch {
                        // dA = dC · op(B)ᵀ
                        gemm(m, n, k, &g[p * m * n..], false, &vb[p * k * n..], !*transpose_b, &mut da[p * m * k..], 1.0);
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for p in 0..batch {
                        if *transpose_b {
                            // B is n×k: dB = dCᵀ · A
                            gemm(n, m, k, &g[p * m * n..], true, &va[p * m * k..], false, &mut db[p * k * n..], 1.0);
                        } else {
                            gemm(k, m, n, &va[p * m * k..], true, &g[p * m * n..], false, &mut db[p * k * n..], 1.0);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += sign * g);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += sign * g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        d[i] += g[i] * vb[i];
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for i in 0..g.len() {
                        d[i] += g[i] * va[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g);
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(d) = self.slot(grads, *bias) {
                    let n = d.len();
                    for (i, gv) in g.iter().enumerate() {
                        d[i % n] += gv;
                    }
                }
            }
            Op::Transpose(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    let s = node.value.shape();
                    let t = transpose2(g, s[0], s[1]);
                    d.iter_mut().zip(t).for_each(|(d, g)| *d += g);
                }
            }
            Op::SwapLeading(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    let s = node.value.shape();
                    let t = swap_leading(g, s[0], s[1], s[2]);
                    d.iter_mut().zip(t).for_each(|(d, g)| *d += g);
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::Softmax { x } => {
                if let Some(d) = self.slot(grads, *x) {
                    let y = node.value.data();
                    let m = *node.value.shape().last().unwrap();
                    for ((yr, gr), dr) in y.chunks(m).zip(g.chunks(m)).zip(d.chunks_mut(m)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..m {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, shift, xhat, inv_std } => {
                let n = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                if let Some(d) = self.slot(grads, *x) {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..n {
                            let dh = gr[j] * gv[j];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        for j in 0..n {
                            let dh = gr[j] * gv[j];
                            d[r * n + j] += is * (dh - s1 / n as f64 - hr[j] * s2 / n as f64);
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *gain) {
                    for (i, (gv, h)) in g.iter().zip(xhat).enumerate() {
                        d[i % n] += gv * h;
                    }
                }
                if let Some(d) = self.slot(grads, *shift) {
                    for (i, gv) in g.iter().enumerate() {
                        d[i % n] += gv;
                    }
                }
            }
            Op::Gelu(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    let xv = self.value(*x).data();
                    for i in 0..g.len() {
                        d[i] += g[i] * gelu_grad(xv[i]);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::AbsSum(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    let xv = self.value(*x).data();
                    for (d, &v) in d.iter_mut().zip(xv) {
                        if v > 0.0 {
                            *d += g[0];
                        } else if v < 0.0 {
                            *d -= g[0];
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let c = 2.0 * g[0] / va.len().max(1) as f64;
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..va.len() {
                        d[i] += c * (va[i] - vb[i]);
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for i in 0..va.len() {
                        d[i] -= c * (va[i] - vb[i]);
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                if let Some(d) = self.slot(grads, *x) {
                    let (outer, extent, inner) = axis_split(self.shape(*x), *axis);
                    let len = node.value.shape()[*axis];
                    for o in 0..outer {
                        let dst = (o * extent + start) * inner;
                        let src = o * len * inner;
                        for i in 0..len * inner {
                            d[dst + i] += g[src + i];
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let ext = self.shape(p)[*axis];
                    if let Some(d) = self.slot(grads, p) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * ext * inner;
                            for i in 0..ext * inner {
                                d[dst + i] += g[src + i];
                            }
                        }
                    }
                    offset += ext;
                }
            }
        }
    }
}

fn transpose2(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn swap_leading(data: &[f64], a: usize, b: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..a {
        for j in 0..b {
            let src = (i * b + j) * c;
            let dst = (j * a + i) * c;
            out[dst..dst + c].copy_from_slice(&data[src..src + c]);
        }
    }
    out
}
