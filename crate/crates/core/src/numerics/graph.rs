//! Tape-based reverse-mode autodiff over whole tensors.
//!
//! Every operation appends a node to the tape; node order is a valid
//! topological order, so `backward` is a single reverse sweep.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Tanh(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Mask(Var, Vec<f64>),
    ConcatCols(Var, Var),
    Min(Var, Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`. Variables the loss does
    /// not reach get zeros.
    pub fn wrt(&self, var: Var) -> Tensor {
        let shape = &self.shapes[var.0];
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn wrt_all(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let out = matmul(self.value(a).data(), self.value(b).data(), n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), rg))
    }

    /// Adds a `[m]` bias to every row of a `[n, m]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::shape("add_bias", sx, sb));
        }
        let m = sb[0];
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(m) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let shape = sx.to_vec();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBias(x, bias), rg))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(context, sa, sb));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = sa.to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "min", |x, y| if x <= y { x } else { y }, Op::Min(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Multiplies by a fixed elementwise mask (used for dropout).
    pub fn mask(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        if self.shape(x) != mask.shape() {
            return Err(Error::shape("mask", self.shape(x), mask.shape()));
        }
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mask(x, mask.data().to_vec()), rg))
    }

    /// Per-row layer normalization with affine `gain` and `bias` of width `m`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || self.shape(gain) != [sx[1]] || self.shape(bias) != [sx[1]] {
            return Err(Error::shape("layer_norm", sx, self.shape(gain)));
        }
        let (n, m) = (sx[0], sx[1]);
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normalized = vec![0.0; n * m];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &xs[i * m..(i + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..m {
                let xh = (row[j] - mean) * is;
                normalized[i * m + j] = xh;
                out[i * m + j] = xh * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            Tensor::new(vec![n, m], out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// `[n, p] ++ [n, q] -> [n, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::shape("concat_cols", sa, sb));
        }
        let (n, p, q) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            out.extend_from_slice(&da[i * p..(i + 1) * p]);
            out.extend_from_slice(&db[i * q..(i + 1) * q]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, p + q], out)?, Op::ConcatCols(a, b), rg))
    }

    /// Mean of all elements, as a `[1]` scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// `mean((a - b)^2)`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.rg(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                let av = self.value(a).data();
                let bv = self.value(b).data();
                self.accumulate(grads, a, |da| matmul_bt_acc(g, bv, n, m, k, da));
                self.accumulate(grads, b, |db| matmul_at_acc(av, g, n, k, m, db));
            }
            &Op::AddBias(x, bias) => {
                let m = self.shape(bias)[0];
                self.accumulate(grads, x, |dx| add_into(dx, g));
                self.accumulate(grads, bias, |db| {
                    for row in g.chunks(m) {
                        add_into(db, row);
                    }
                });
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, |da| add_into(da, g));
                self.accumulate(grads, b, |db| add_into(db, g));
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, |da| add_into(da, g));
                self.accumulate(grads, b, |db| {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                self.accumulate(grads, a, |da| {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                });
                self.accumulate(grads, b, |db| {
                    for ((d, &gv), &x) in db.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                });
            }
            &Op::Scale(x, factor) => self.accumulate(grads, x, |dx| {
                for (d, &gv) in dx.iter_mut().zip(g) {
                    *d += gv * factor;
                }
            }),
            &Op::Square(x) => {
                let xv = self.value(x).data();
                self.accumulate(grads, x, |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += 2.0 * v * gv;
                    }
                });
            }
            &Op::Tanh(x) => {
                let yv = node.value.data();
                self.accumulate(grads, x, |dx| {
                    for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(yv) {
                        *d += gv * (1.0 - y * y);
                    }
                });
            }
            &Op::Relu(x) => {
                let xv = self.value(x).data();
                self.accumulate(grads, x, |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let m = self.shape(*gain)[0];
                let gv = self.value(*gain).data();
                self.accumulate(grads, *gain, |dg| {
                    for (grow, xrow) in g.chunks(m).zip(normalized.chunks(m)) {
                        for j in 0..m {
                            dg[j] += grow[j] * xrow[j];
                        }
                    }
                });
                self.accumulate(grads, *bias, |db| {
                    for grow in g.chunks(m) {
                        add_into(db, grow);
                    }
                });
                self.accumulate(grads, *x, |dx| {
                    let mf = m as f64;
                    let mut dxhat = vec![0.0; m];
                    for (i, (grow, xrow)) in g.chunks(m).zip(normalized.chunks(m)).enumerate() {
                        let mut sum = 0.0;
                        let mut dot = 0.0;
                        for j in 0..m {
                            dxhat[j] = grow[j] * gv[j];
                            sum += dxhat[j];
                            dot += dxhat[j] * xrow[j];
                        }
                        let out = &mut dx[i * m..(i + 1) * m];
                        for j in 0..m {
                            out[j] += inv_std[i] / mf * (mf * dxhat[j] - sum - xrow[j] * dot);
                        }
                    }
                });
            }
            Op::Mask(x, mask) => self.accumulate(grads, *x, |dx| {
                for ((d, &gv), &mv) in dx.iter_mut().zip(g).zip(mask) {
                    *d += gv * mv;
                }
            }),
            &Op::ConcatCols(a, b) => {
                let (p, q) = (self.shape(a)[1], self.shape(b)[1]);
                self.accumulate(grads, a, |da| {
                    for (drow, grow) in da.chunks_mut(p).zip(g.chunks(p + q)) {
                        add_into(drow, &grow[..p]);
                    }
                });
                self.accumulate(grads, b, |db| {
                    for (drow, grow) in db.chunks_mut(q).zip(g.chunks(p + q)) {
                        add_into(drow, &grow[p..]);
                    }
                });
            }
            &Op::Min(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                self.accumulate(grads, a, |da| {
                    for i in 0..da.len() {
                        if av[i] <= bv[i] {
                            da[i] += g[i];
                        }
                    }
                });
                self.accumulate(grads, b, |db| {
                    for i in 0..db.len() {
                        if av[i] > bv[i] {
                            db[i] += g[i];
                        }
                    }
                });
            }
            &Op::Mean(x) => {
                let n = self.value(x).len() as f64;
                self.accumulate(grads, x, |dx| {
                    let share = g[0] / n;
                    for d in dx.iter_mut() {
                        *d += share;
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `out [n, m] += a [n, k] x b [k, m]`, all row-major. Each output element
/// sums its `k` products in ascending order before being added to `out`.
fn gemm_acc(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    const R: usize = 4;
    const C: usize = 8;
    let n_main = n - n % R;
    let m_main = m - m % C;
    for i in (0..n_main).step_by(R) {
        let rows: [&[f64]; R] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
        for j in (0..m_main).step_by(C) {
            let mut acc = [[0.0f64; C]; R];
            for p in 0..k {
                let bv: &[f64; C] = b[p * m + j..p * m + j + C].try_into().expect("tile");
                for r in 0..R {
                    let av = rows[r][p];
                    for c in 0..C {
                        acc[r][c] += av * bv[c];
                    }
                }
            }
            for (r, acc_row) in acc.iter().enumerate() {
                let o = &mut out[(i + r) * m + j..(i + r) * m + j + C];
                for c in 0..C {
                    o[c] += acc_row[c];
                }
            }
        }
        for r in 0..R {
            gemm_row_tail(rows[r], b, k, m, m_main, &mut out[(i + r) * m..(i + r + 1) * m]);
        }
    }
    for i in n_main..n {
        gemm_row_tail(&a[i * k..(i + 1) * k], b, k, m, 0, &mut out[i * m..(i + 1) * m]);
    }
}

/// Columns `from..m` of one output row, same summation order as the tiles.
fn gemm_row_tail(arow: &[f64], b: &[f64], k: usize, m: usize, from: usize, orow: &mut [f64]) {
    for (c, o) in orow.iter_mut().enumerate().skip(from) {
        let mut s = 0.0;
        for (p, &av) in arow.iter().enumerate().take(k) {
            s += av * b[p * m + c];
        }
        *o += s;
    }
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

/// `a [n, k] x b [k, m]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    gemm_acc(a, b, n, k, m, &mut out);
    out
}

/// `out [n, k] += g [n, m] x b^T` where `b` is `[k, m]`.
fn matmul_bt_acc(g: &[f64], b: &[f64], n: usize, m: usize, k: usize, out: &mut [f64]) {
    gemm_acc(g, &transpose(b, k, m), n, m, k, out);
}

/// `out [k, m] += a^T x g` where `a` is `[n, k]` and `g` is `[n, m]`.
fn matmul_at_acc(a: &[f64], g: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    gemm_acc(&transpose(a, n, k), g, k, n, m, out);
}
