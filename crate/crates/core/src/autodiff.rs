//! A small reverse-mode tape over [`Mat`] values.
//!
//! Parameters live outside the tape and are referenced by index; `backward`
//! returns one optional gradient per parameter.

use crate::tensor::{gemm, matmul, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Which keys each attention query may see.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mask {
    Full,
    Causal,
    /// Causal within runs of equal segment id, nothing across them.
    Segments(Vec<usize>),
}

impl Mask {
    #[inline]
    fn allows(&self, i: usize, j: usize) -> bool {
        match self {
            Mask::Full => true,
            Mask::Causal => j <= i,
            Mask::Segments(seg) => j <= i && seg[i] == seg[j],
        }
    }
}

enum Op {
    Param(usize),
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Mat>,
    },
    MeanRows {
        x: Var,
        ranges: Vec<Option<(usize, usize)>>,
    },
    Rows {
        x: Var,
        idx: Vec<usize>,
    },
    Concat(Vec<Var>),
    LogSoftmaxPick {
        logits: Var,
        targets: Vec<usize>,
        probs: Mat,
    },
    Sum(Var),
    Scale(Var, f64),
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p [Mat],
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Mat]) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; params.len()],
        }
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
            (None, Op::Param(id)) => &self.params[*id],
            _ => unreachable!("valueless non-parameter node"),
        }
    }

    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id] = Some(v);
        v
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Const)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// `a` plus the single row `b` broadcast over every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.rows, 1, "add_row expects a row vector");
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v = gelu(*v));
        self.push(out, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let n = xv.cols as f64;
        let mut xhat = Mat::zeros(xv.rows, xv.cols);
        let mut out = Mat::zeros(xv.rows, xv.cols);
        let mut inv_std = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..xv.cols {
                let h = (row[c] - mean) * inv;
                xhat.data[r * xv.cols + c] = h;
                out.data[r * xv.cols + c] = h * g.data[c] + b.data[c];
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

    /// Multi-head scaled dot-product attention over already projected inputs.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: Mask) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols;
        assert_eq!(d % heads, 0, "width {d} not divisible by {heads} heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros(qv.rows, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = qv.col_block(h * dh, dh);
            let kh = kv.col_block(h * dh, dh);
            let vh = vv.col_block(h * dh, dh);
            let mut s = Mat::zeros(qv.rows, kv.rows);
            gemm(scale, &qh, false, &kh, true, 0.0, &mut s);
            for i in 0..s.rows {
                let row = s.row_mut(i);
                let mut max = f64::NEG_INFINITY;
                for (j, x) in row.iter().enumerate() {
                    if mask.allows(i, j) && *x > max {
                        max = *x;
                    }
                }
                let mut sum = 0.0;
                for (j, x) in row.iter_mut().enumerate() {
                    if mask.allows(i, j) {
                        *x = (*x - max).exp();
                        sum += *x;
                    } else {
                        *x = 0.0;
                    }
                }
                if sum > 0.0 {
                    row.iter_mut().for_each(|x| *x /= sum);
                }
            }
            let oh = matmul(&s, &vh);
            out.set_col_block(h * dh, &oh);
            probs.push(s);
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// One output row per range: the mean of `x` over that row range, or a
    /// zero row for `None`.
    pub fn mean_rows(&mut self, x: Var, ranges: Vec<Option<(usize, usize)>>) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros(ranges.len(), xv.cols);
        for (o, range) in ranges.iter().enumerate() {
            if let Some((s, e)) = *range {
                assert!(s < e && e <= xv.rows, "bad pooling range {s}..{e} over {} rows", xv.rows);
                let inv = 1.0 / (e - s) as f64;
                let dst = out.row_mut(o);
                for r in s..e {
                    for (d, v) in dst.iter_mut().zip(xv.row(r)) {
                        *d += v * inv;
                    }
                }
            }
        }
        self.push(out, Op::MeanRows { x, ranges })
    }

    pub fn rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros(idx.len(), xv.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(xv.row(i));
        }
        self.push(out, Op::Rows { x, idx })
    }

    pub fn concat(&mut self, parts: Vec<Var>) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in &parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat width mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::Concat(parts))
    }

    /// Column of `log softmax(logits[i])[targets[i]]`.
    pub fn log_softmax_pick(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len());
        let mut probs = Mat::zeros(lv.rows, lv.cols);
        let mut out = Mat::zeros(lv.rows, 1);
        for r in 0..lv.rows {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            for (p, x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
            out.data[r] = row[targets[r]] - lse;
        }
        self.push(
            out,
            Op::LogSoftmaxPick {
                logits,
                targets,
                probs,
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Mat::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.len(), 1, "not a scalar");
        m.data[0]
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Vec<Option<Mat>> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        let mut param_grads: Vec<Option<Mat>> = vec![None; self.params.len()];

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Param(id) => param_grads[*id] = Some(g),
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = self.grad_slot(&mut grads, *a);
                    gemm(1.0, &g, false, bv, true, 1.0, ga);
                    let gb = self.grad_slot(&mut grads, *b);
                    gemm(1.0, av, true, &g, false, 1.0, gb);
                }
                Op::Add(a, b) => {
                    self.grad_slot(&mut grads, *a).add_assign(&g);
                    self.grad_slot(&mut grads, *b).add_assign(&g);
                }
                Op::AddRow(a, b) => {
                    self.grad_slot(&mut grads, *a).add_assign(&g);
                    let gb = self.grad_slot(&mut grads, *b);
                    for r in 0..g.rows {
                        for (d, s) in gb.data.iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                }
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    let ga = self.grad_slot(&mut grads, *a);
                    for ((d, x), gg) in ga.data.iter_mut().zip(&av.data).zip(&g.data) {
                        *d += gg * gelu_grad(*x);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma).clone();
                    let cols = g.cols;
                    let n = cols as f64;
                    {
                        let gg = self.grad_slot(&mut grads, *gamma);
                        for r in 0..g.rows {
                            for c in 0..cols {
                                gg.data[c] += g.at(r, c) * xhat.at(r, c);
                            }
                        }
                    }
                    {
                        let gb = self.grad_slot(&mut grads, *beta);
                        for r in 0..g.rows {
                            for (d, s) in gb.data.iter_mut().zip(g.row(r)) {
                                *d += s;
                            }
                        }
                    }
                    let gx = self.grad_slot(&mut grads, *x);
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..g.rows {
                        let mut sum = 0.0;
                        let mut dot = 0.0;
                        for c in 0..cols {
                            dxhat[c] = g.at(r, c) * gv.data[c];
                            sum += dxhat[c];
                            dot += dxhat[c] * xhat.at(r, c);
                        }
                        let inv = inv_std[r];
                        let dst = gx.row_mut(r);
                        for c in 0..cols {
                            dst[c] += inv / n * (n * dxhat[c] - sum - xhat.at(r, c) * dot);
                        }
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qv.cols;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Mat::zeros(qv.rows, d);
                    let mut dk = Mat::zeros(kv.rows, d);
                    let mut dv = Mat::zeros(vv.rows, d);
                    for (h, p) in probs.iter().enumerate() {
                        let goh = g.col_block(h * dh, dh);
                        let qh = qv.col_block(h * dh, dh);
                        let kh = kv.col_block(h * dh, dh);
                        let vh = vv.col_block(h * dh, dh);
                        let mut dp = Mat::zeros(p.rows, p.cols);
                        gemm(1.0, &goh, false, &vh, true, 0.0, &mut dp);
                        let mut dvh = Mat::zeros(vv.rows, dh);
                        gemm(1.0, p, true, &goh, false, 0.0, &mut dvh);
                        for i in 0..p.rows {
                            let pr = p.row(i);
                            let dot: f64 = pr.iter().zip(dp.row(i)).map(|(a, b)| a * b).sum();
                            for (ds, pv) in dp.row_mut(i).iter_mut().zip(pr) {
                                *ds = pv * (*ds - dot) * scale;
                            }
                        }
                        let dqh = matmul(&dp, &kh);
                        let mut dkh = Mat::zeros(kv.rows, dh);
                        gemm(1.0, &dp, true, &qh, false, 0.0, &mut dkh);
                        dq.set_col_block(h * dh, &dqh);
                        dk.set_col_block(h * dh, &dkh);
                        dv.set_col_block(h * dh, &dvh);
                    }
                    self.grad_slot(&mut grads, *q).add_assign(&dq);
                    self.grad_slot(&mut grads, *k).add_assign(&dk);
                    self.grad_slot(&mut grads, *v).add_assign(&dv);
                }
                Op::MeanRows { x, ranges } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    for (o, range) in ranges.iter().enumerate() {
                        if let Some((s, e)) = *range {
                            let inv = 1.0 / (e - s) as f64;
                            for r in s..e {
                                for (d, gg) in gx.row_mut(r).iter_mut().zip(g.row(o)) {
                                    *d += gg * inv;
                                }
                            }
                        }
                    }
                }
                Op::Rows { x, idx } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    for (o, &i) in idx.iter().enumerate() {
                        for (d, gg) in gx.row_mut(i).iter_mut().zip(g.row(o)) {
                            *d += gg;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows;
                        let cols = g.cols;
                        let gp = self.grad_slot(&mut grads, p);
                        for (d, s) in gp
                            .data
                            .iter_mut()
                            .zip(&g.data[offset * cols..(offset + rows) * cols])
                        {
                            *d += s;
                        }
                        offset += rows;
                    }
                }
                Op::LogSoftmaxPick {
                    logits,
                    targets,
                    probs,
                } => {
                    let gl = self.grad_slot(&mut grads, *logits);
                    for (r, &t) in targets.iter().enumerate() {
                        let gr = g.data[r];
                        let dst = gl.row_mut(r);
                        for (d, p) in dst.iter_mut().zip(probs.row(r)) {
                            *d -= gr * p;
                        }
                        dst[t] += gr;
                    }
                }
                Op::Sum(a) => {
                    let s = g.data[0];
                    self.grad_slot(&mut grads, *a).data.iter_mut().for_each(|d| *d += s);
                }
                Op::Scale(a, s) => {
                    let ga = self.grad_slot(&mut grads, *a);
                    for (d, gg) in ga.data.iter_mut().zip(&g.data) {
                        *d += gg * s;
                    }
                }
            }
        }
        param_grads
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Mat>], v: Var) -> &'g mut Mat {
        let (r, c) = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Mat::zeros(r, c))
    }
}
