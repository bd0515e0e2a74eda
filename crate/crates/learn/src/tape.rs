//! Reverse-mode differentiation over matrix operations.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from the store and never copied; [`Tape::backward`] returns one
//! gradient matrix per parameter tensor. Masks mark valid rows or columns;
//! masked positions contribute nothing and receive zero gradient.

use std::rc::Rc;

use crate::tensor::{gemm, matmul, Matrix, Trans};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

pub const LN_EPS: f64 = 1e-5;

enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Exp(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    LogSoftmaxCol { x: Var, mask: Rc<[bool]> },
    MeanRows { x: Var, mask: Rc<[bool]> },
    MeanCols { x: Var, mask: Rc<[bool]> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Pick { x: Var, r: usize, c: usize },
    Sum(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Min(Var, Var),
}

struct Node {
    op: Op,
    /// `None` for parameters, whose value lives in the store.
    value: Option<Matrix>,
}

pub struct Tape<'p> {
    params: &'p [Matrix],
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
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

fn map(a: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix::from_vec(a.rows, a.cols, a.data.iter().map(|&v| f(v)).collect())
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Matrix::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Matrix]) -> Self {
        Self { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(i)) => &self.params[*i],
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar");
        m.data[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(Op::Input, m)
    }

    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        self.nodes.push(Node { op: Op::Param(id), value: None });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), Trans::No, self.value(b), Trans::No);
        self.push(Op::MatMul(a, b), out)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), Trans::No, self.value(b), Trans::Yes);
        self.push(Op::MatMulNt(a, b), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, r) = (self.value(a), self.value(row));
        assert_eq!((1, am.cols), r.shape(), "add_row shape");
        let mut out = am.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(Op::AddRow(a, row), out)
    }

    /// Multiplies every row of `a` elementwise by a `1 × cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (am, r) = (self.value(a), self.value(row));
        assert_eq!((1, am.cols), r.shape(), "mul_row shape");
        let mut out = am.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o *= b;
            }
        }
        self.push(Op::MulRow(a, row), out)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = map(self.value(a), |x| x * s);
        self.push(Op::Scale(a, s), out)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = map(self.value(a), gelu);
        self.push(Op::Gelu(a), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = map(self.value(a), f64::exp);
        self.push(Op::Exp(a), out)
    }

    /// Row-wise layer normalisation with a `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xm = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        assert_eq!((1, xm.cols), g.shape(), "layer_norm gain shape");
        assert_eq!((1, xm.cols), b.shape(), "layer_norm bias shape");
        let d = xm.cols as f64;
        let mut xhat = Matrix::zeros(xm.rows, xm.cols);
        let mut out = Matrix::zeros(xm.rows, xm.cols);
        let mut inv_std = Vec::with_capacity(xm.rows);
        for i in 0..xm.rows {
            let row = xm.row(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..xm.cols {
                let h = (row[j] - mean) * inv;
                xhat.data[i * xm.cols + j] = h;
                out.data[i * xm.cols + j] = h * g.data[j] + b.data[j];
            }
        }
        self.push(Op::LayerNorm { x, gamma, beta, xhat, inv_std }, out)
    }

    /// Softmax over the columns of each row, restricted to columns whose
    /// mask entry is true. Rows with no valid column are all zero.
    pub fn softmax_rows(&mut self, x: Var, key_mask: Rc<[bool]>) -> Var {
        let xm = self.value(x);
        assert_eq!(key_mask.len(), xm.cols, "softmax mask length");
        let mut out = Matrix::zeros(xm.rows, xm.cols);
        for i in 0..xm.rows {
            let row = xm.row(i);
            let max = row
                .iter()
                .zip(key_mask.iter())
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let o = out.row_mut(i);
            let mut z = 0.0;
            for j in 0..row.len() {
                if key_mask[j] {
                    o[j] = (row[j] - max).exp();
                    z += o[j];
                }
            }
            for v in o.iter_mut() {
                *v /= z;
            }
        }
        self.push(Op::SoftmaxRows(x), out)
    }

    /// Log-softmax over the valid entries of an `n × 1` column. Masked
    /// entries hold 0 and carry no gradient; callers must not read them as
    /// log-probabilities.
    pub fn log_softmax_col(&mut self, x: Var, mask: Rc<[bool]>) -> Var {
        let xm = self.value(x);
        assert_eq!(xm.cols, 1, "log_softmax_col expects a column");
        assert_eq!(mask.len(), xm.rows, "log_softmax mask length");
        let max = xm
            .data
            .iter()
            .zip(mask.iter())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out = Matrix::zeros(xm.rows, 1);
        if max > f64::NEG_INFINITY {
            let lse = max
                + xm.data
                    .iter()
                    .zip(mask.iter())
                    .filter(|(_, &m)| m)
                    .map(|(&v, _)| (v - max).exp())
                    .sum::<f64>()
                    .ln();
            for i in 0..xm.rows {
                if mask[i] {
                    out.data[i] = xm.data[i] - lse;
                }
            }
        }
        self.push(Op::LogSoftmaxCol { x, mask }, out)
    }

    /// Mean over the rows whose mask entry is true; a `1 × cols` row, zero
    /// when no row is valid.
    pub fn mean_rows(&mut self, x: Var, mask: Rc<[bool]>) -> Var {
        let xm = self.value(x);
        assert_eq!(mask.len(), xm.rows, "mean_rows mask length");
        let n = mask.iter().filter(|&&m| m).count();
        let mut out = Matrix::zeros(1, xm.cols);
        if n > 0 {
            for i in (0..xm.rows).filter(|&i| mask[i]) {
                for (o, v) in out.data.iter_mut().zip(xm.row(i)) {
                    *o += v;
                }
            }
            for o in &mut out.data {
                *o /= n as f64;
            }
        }
        self.push(Op::MeanRows { x, mask }, out)
    }

    /// Mean over the columns whose mask entry is true; a `rows × 1` column.
    pub fn mean_cols(&mut self, x: Var, mask: Rc<[bool]>) -> Var {
        let xm = self.value(x);
        assert_eq!(mask.len(), xm.cols, "mean_cols mask length");
        let n = mask.iter().filter(|&&m| m).count();
        let mut out = Matrix::zeros(xm.rows, 1);
        if n > 0 {
            for i in 0..xm.rows {
                let s: f64 = xm.row(i).iter().zip(mask.iter()).filter(|(_, &m)| m).map(|(v, _)| v).sum();
                out.data[i] = s / n as f64;
            }
        }
        self.push(Op::MeanCols { x, mask }, out)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xm = self.value(x);
        assert!(start + len <= xm.cols, "slice out of range");
        let mut out = Matrix::zeros(xm.rows, len);
        for i in 0..xm.rows {
            out.row_mut(i).copy_from_slice(&xm.row(i)[start..start + len]);
        }
        self.push(Op::SliceCols { x, start }, out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pm = self.value(p);
            assert_eq!(pm.rows, rows, "concat row mismatch");
            for i in 0..rows {
                out.row_mut(i)[off..off + pm.cols].copy_from_slice(pm.row(i));
            }
            off += pm.cols;
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    pub fn pick(&mut self, x: Var, r: usize, c: usize) -> Var {
        let v = self.value(x).at(r, c);
        self.push(Op::Pick { x, r, c }, Matrix::scalar(v))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).data.iter().sum();
        self.push(Op::Sum(x), Matrix::scalar(v))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = map(self.value(x), |v| v.clamp(lo, hi));
        self.push(Op::Clamp { x, lo, hi }, out)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let out = zip(self.value(a), self.value(b), f64::min);
        self.push(Op::Min(a, b), out)
    }

    /// Gradients of the scalar `loss` with respect to every parameter
    /// tensor, in store order. Unused parameters get zero matrices.
    pub fn backward(&self, loss: Var) -> Vec<Matrix> {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut out: Vec<Matrix> = self.params.iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect();

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(i) => out[*i].add_assign(&g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, matmul(&g, Trans::No, bv, Trans::Yes));
                    acc(&mut grads, *b, matmul(av, Trans::Yes, &g, Trans::No));
                }
                Op::MatMulNt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, matmul(&g, Trans::No, bv, Trans::No));
                    let mut gb = Matrix::zeros(bv.rows, bv.cols);
                    gemm(1.0, &g, Trans::Yes, av, Trans::No, 0.0, &mut gb);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, map(&g, |v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, zip(&g, bv, |x, y| x * y));
                    acc(&mut grads, *b, zip(&g, av, |x, y| x * y));
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (o, v) in gr.data.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let (av, rv) = (self.value(*a), self.value(*row));
                    let mut ga = g.clone();
                    let mut gr = Matrix::zeros(1, g.cols);
                    for i in 0..g.rows {
                        let (gi, ai) = (g.row(i), av.row(i));
                        for j in 0..g.cols {
                            gr.data[j] += gi[j] * ai[j];
                        }
                        for (o, r) in ga.row_mut(i).iter_mut().zip(&rv.data) {
                            *o *= r;
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *row, gr);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(&mut grads, *a, map(&g, |v| v * s));
                }
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    acc(&mut grads, *a, zip(&g, av, |gv, x| gv * gelu_grad(x)));
                }
                Op::Exp(a) => {
                    let y = self.nodes[idx].value.as_ref().expect("exp value");
                    acc(&mut grads, *a, zip(&g, y, |gv, yv| gv * yv));
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gm = self.value(*gamma);
                    let d = g.cols as f64;
                    let mut gx = Matrix::zeros(g.rows, g.cols);
                    let mut gg = Matrix::zeros(1, g.cols);
                    let mut gb = Matrix::zeros(1, g.cols);
                    for i in 0..g.rows {
                        let (gi, hi) = (g.row(i), xhat.row(i));
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..g.cols {
                            gg.data[j] += gi[j] * hi[j];
                            gb.data[j] += gi[j];
                            let dh = gi[j] * gm.data[j];
                            s1 += dh;
                            s2 += dh * hi[j];
                        }
                        let inv = inv_std[i];
                        let o = gx.row_mut(i);
                        for j in 0..o.len() {
                            let dh = gi[j] * gm.data[j];
                            o[j] = inv / d * (d * dh - s1 - hi[j] * s2);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, gg);
                    acc(&mut grads, *beta, gb);
                }
                Op::SoftmaxRows(x) => {
                    let y = self.nodes[idx].value.as_ref().expect("softmax value");
                    let mut gx = Matrix::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let (gi, yi) = (g.row(i), y.row(i));
                        let dot: f64 = gi.iter().zip(yi).map(|(a, b)| a * b).sum();
                        for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                            *o = yi[j] * (gi[j] - dot);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::LogSoftmaxCol { x, mask } => {
                    let y = self.nodes[idx].value.as_ref().expect("log_softmax value");
                    let total: f64 = g.data.iter().zip(mask.iter()).filter(|(_, &m)| m).map(|(v, _)| v).sum();
                    let mut gx = Matrix::zeros(g.rows, 1);
                    for i in 0..g.rows {
                        if mask[i] {
                            gx.data[i] = g.data[i] - y.data[i].exp() * total;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::MeanRows { x, mask } => {
                    let xv = self.value(*x);
                    let n = mask.iter().filter(|&&m| m).count();
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    if n > 0 {
                        for i in (0..xv.rows).filter(|&i| mask[i]) {
                            for (o, v) in gx.row_mut(i).iter_mut().zip(&g.data) {
                                *o = v / n as f64;
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::MeanCols { x, mask } => {
                    let xv = self.value(*x);
                    let n = mask.iter().filter(|&&m| m).count();
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    if n > 0 {
                        for i in 0..xv.rows {
                            let gi = g.data[i] / n as f64;
                            for (o, &m) in gx.row_mut(i).iter_mut().zip(mask.iter()) {
                                if m {
                                    *o = gi;
                                }
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    for i in 0..g.rows {
                        gx.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut gp = Matrix::zeros(g.rows, cols);
                        for i in 0..g.rows {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + cols]);
                        }
                        off += cols;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::Pick { x, r, c } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    gx.data[r * xv.cols + c] = g.data[0];
                    acc(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    acc(&mut grads, *x, Matrix::filled(xv.rows, xv.cols, g.data[0]));
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = self.value(*x);
                    let (lo, hi) = (*lo, *hi);
                    acc(&mut grads, *x, zip(&g, xv, |gv, v| if v > lo && v < hi { gv } else { 0.0 }));
                }
                Op::Min(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = Matrix::from_vec(
                        g.rows,
                        g.cols,
                        (0..g.data.len()).map(|k| if av.data[k] <= bv.data[k] { g.data[k] } else { 0.0 }).collect(),
                    );
                    let gb = zip(&g, &ga, |t, x| t - x);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        // xorshift keeps the tests free of an rng dependency
        let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        let data = (0..rows * cols)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    /// Central-difference check of every parameter entry.
    fn check(params: Vec<Matrix>, f: impl Fn(&mut Tape) -> Var) {
        let analytic = {
            let mut t = Tape::new(&params);
            let l = f(&mut t);
            t.backward(l)
        };
        let h = 1e-6;
        for p in 0..params.len() {
            for k in 0..params[p].len() {
                let eval = |delta: f64| {
                    let mut ps = params.clone();
                    ps[p].data[k] += delta;
                    let mut t = Tape::new(&ps);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = analytic[p].data[k];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
                assert!(err < 1e-6, "param {p}[{k}]: fd {fd} vs analytic {an}");
            }
        }
    }

    #[test]
    fn matmul_and_elementwise_gradients() {
        let params = vec![rand_matrix(3, 4, 1), rand_matrix(4, 2, 2), rand_matrix(2, 4, 3), rand_matrix(1, 2, 4)];
        check(params, |t| {
            let (a, b, c, r) = (t.param(0), t.param(1), t.param(2), t.param(3));
            let ab = t.matmul(a, b);
            let anc = t.matmul_nt(a, c);
            let s = t.add(ab, anc);
            let s = t.add_row(s, r);
            let m = t.mul_row(s, r);
            let g = t.gelu(m);
            let e = t.exp(g);
            let d = t.sub(e, s);
            let q = t.mul(d, d);
            let q = t.scale(q, 0.5);
            t.sum(q)
        });
    }

    #[test]
    fn layer_norm_and_softmax_gradients() {
        let params = vec![rand_matrix(3, 5, 5), rand_matrix(1, 5, 6), rand_matrix(1, 5, 7), rand_matrix(5, 5, 8)];
        let mask: Rc<[bool]> = vec![true, false, true, true, false].into();
        check(params, move |t| {
            let (x, g, b, w) = (t.param(0), t.param(1), t.param(2), t.param(3));
            let n = t.layer_norm(x, g, b);
            let s = t.matmul(n, w);
            let p = t.softmax_rows(s, mask.clone());
            let y = t.matmul(p, w);
            let m = t.mean_rows(y, vec![true, true, false].into());
            let c = t.mean_cols(y, mask.clone());
            let sm = t.sum(m);
            let sc = t.sum(c);
            let z = t.mul(sm, sc);
            let sl = t.slice_cols(y, 1, 3);
            let cat = t.concat_cols(&[sl, n]);
            let sq = t.mul(cat, cat);
            let ss = t.sum(sq);
            t.add(z, ss)
        });
    }

    #[test]
    fn log_softmax_pick_clamp_min_gradients() {
        let params = vec![rand_matrix(4, 1, 9), rand_matrix(4, 1, 10)];
        let mask: Rc<[bool]> = vec![true, true, false, true].into();
        check(params, move |t| {
            let (x, y) = (t.param(0), t.param(1));
            let l = t.log_softmax_col(x, mask.clone());
            let p = t.exp(l);
            let pl = t.mul(p, l);
            let h = t.sum(pl);
            let a = t.pick(l, 3, 0);
            let c = t.clamp(y, -0.5, 0.5);
            let m = t.min(c, y);
            let sm = t.sum(m);
            let s = t.add(h, a);
            t.add(s, sm)
        });
    }

    #[test]
    fn masked_softmax_rows_sum_to_one_or_zero() {
        let params: Vec<Matrix> = vec![];
        let mut t = Tape::new(&params);
        let x = t.input(rand_matrix(2, 3, 11));
        let p = t.softmax_rows(x, vec![false, true, true].into());
        let pv = t.value(p);
        for i in 0..2 {
            assert_eq!(pv.at(i, 0), 0.0);
            assert!((pv.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let q = t.softmax_rows(x, vec![false, false, false].into());
        assert!(t.value(q).data.iter().all(|&v| v == 0.0));
    }
}
