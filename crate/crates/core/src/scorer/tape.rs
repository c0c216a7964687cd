//! Reverse-mode differentiation over dense row-major matrices.
//!
//! Each node holds its forward value. A few ops are fused (LSTM cell, batch
//! norm, attention, grouped loss) so a whole mini-batch of trajectories flows
//! through a handful of large matrix products instead of scalar nodes.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// A softmax group inside a reward column: rows `start..start + len`, target `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Group {
    pub start: usize,
    pub len: usize,
    pub target: usize,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    Lstm {
        x: Var,
        hc: Option<Var>,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        hidden: usize,
        /// Activated gates `[i f g o]`.
        gates: Array2<f64>,
        tanh_c: Array2<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    /// Per-column affine map of a fixed normalized input.
    Affine {
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        tokens: usize,
        heads: usize,
        masked: bool,
        /// `probs[((b * heads + h) * tokens + i) * tokens + j]`.
        probs: Vec<f64>,
    },
    TokenWeightedSum {
        y: Var,
        w: Var,
        tokens: usize,
    },
    FocalNll {
        r: Var,
        groups: Vec<Group>,
        gamma: f64,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Array2<f64>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Focal weight `(1 - p)^gamma` and its derivative in `p`, safe at `p = 1`.
fn focal_terms(p: f64, gamma: f64) -> (f64, f64) {
    let q = (1.0 - p).max(0.0);
    if gamma == 0.0 {
        return (1.0, 0.0);
    }
    let w = q.powf(gamma);
    let dw = if q == 0.0 { 0.0 } else { -gamma * q.powf(gamma - 1.0) };
    (w, dw)
}

/// Log-softmax of one group, max-subtracted.
fn log_softmax(r: &[f64]) -> Vec<f64> {
    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + r.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    r.iter().map(|x| x - lse).collect()
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

    fn push(&mut self, op: Op, value: Array2<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Input, value, false)
    }

    /// A differentiable leaf bound to parameter slot `index`.
    pub fn param(&mut self, index: usize, value: Array2<f64>) -> Var {
        self.push(Op::Param(index), value, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(Op::MatMul(a, b), v, rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + &self.value(row).row(0);
        let rg = self.rg(&[a, row]);
        self.push(Op::AddRow(a, row), v, rg)
    }

    /// `a @ w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, a: Var, w: Var, b: Var) -> Var {
        let m = self.matmul(a, w);
        self.add_row(m, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(Op::Add(a, b), v, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        let rg = self.rg(&[a]);
        self.push(Op::Sigmoid(a), v, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(Op::Tanh(a), v, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(Op::Relu(a), v, rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(&[a]);
        self.push(Op::SliceRows(a, start, len), v, rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(&[a]);
        self.push(Op::SliceCols(a, start, len), v, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).unwrap();
        let rg = self.rg(parts);
        self.push(Op::ConcatRows(parts.to_vec()), v, rg)
    }

    /// One LSTM step. `hc` is the previous `[h | c]` (zeros when `None`);
    /// the result is the new `[h | c]`, shape `(batch, 2 * hidden)`.
    pub fn lstm_cell(&mut self, x: Var, hc: Option<Var>, w_ih: Var, w_hh: Var, b: Var) -> Var {
        let hidden = self.value(w_hh).nrows();
        let mut z = self.value(x).dot(self.value(w_ih));
        if let Some(hc) = hc {
            let h = self.value(hc).slice(s![.., ..hidden]);
            z += &h.dot(self.value(w_hh));
        }
        z += &self.value(b).row(0);
        let n = z.nrows();
        let mut gates = z;
        let mut out = Array2::<f64>::zeros((n, 2 * hidden));
        let mut tanh_c = Array2::<f64>::zeros((n, hidden));
        for r in 0..n {
            for j in 0..hidden {
                let i = sigmoid(gates[[r, j]]);
                let f = sigmoid(gates[[r, hidden + j]]);
                let g = gates[[r, 2 * hidden + j]].tanh();
                let o = sigmoid(gates[[r, 3 * hidden + j]]);
                gates[[r, j]] = i;
                gates[[r, hidden + j]] = f;
                gates[[r, 2 * hidden + j]] = g;
                gates[[r, 3 * hidden + j]] = o;
                let c_prev = hc.map_or(0.0, |hc| self.nodes[hc.0].value[[r, hidden + j]]);
                let c = f * c_prev + i * g;
                let tc = c.tanh();
                tanh_c[[r, j]] = tc;
                out[[r, j]] = o * tc;
                out[[r, hidden + j]] = c;
            }
        }
        let mut deps = vec![x, w_ih, w_hh, b];
        deps.extend(hc);
        let rg = self.rg(&deps);
        self.push(
            Op::Lstm {
                x,
                hc,
                w_ih,
                w_hh,
                b,
                hidden,
                gates,
                tanh_c,
            },
            out,
            rg,
        )
    }

    /// Batch norm with statistics of `x` itself (per column, biased variance).
    /// Returns the output and the batch `(mean, variance)`.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, Array1<f64>, Array1<f64>) {
        let xv = self.value(x);
        let n = xv.nrows() as f64;
        let mean = xv.mean_axis(Axis(0)).unwrap();
        let centered = xv - &mean;
        let var = centered.mapv(|d| d * d).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = &centered * &inv_std;
        let out = &xhat * &self.value(gamma).row(0) + &self.value(beta).row(0);
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(Op::BatchNorm { x, gamma, beta, xhat, inv_std }, out, rg);
        (v, mean, var)
    }

    /// Batch norm with fixed statistics; gradients flow to `gamma` and `beta` only.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &Array1<f64>, var: &Array1<f64>, eps: f64) -> Var {
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = (self.value(x) - mean) * &inv_std;
        let out = &xhat * &self.value(gamma).row(0) + &self.value(beta).row(0);
        let rg = self.rg(&[gamma, beta]);
        self.push(Op::Affine { gamma, beta, xhat }, out, rg)
    }

    /// Multi-head dot-product attention across `tokens` token blocks of a
    /// token-major layout (row `t * batch + b`). With `masked`, a token does
    /// not attend to itself.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, tokens: usize, heads: usize, masked: bool) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, dim) = qv.dim();
        let batch = rows / tokens;
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::<f64>::zeros((rows, dim));
        let mut probs = vec![0.0; batch * heads * tokens * tokens];
        let mut scores = vec![0.0; tokens];
        for b in 0..batch {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..tokens {
                    let qi = qv.slice(s![i * batch + b, cols.clone()]);
                    let mut m = f64::NEG_INFINITY;
                    for j in 0..tokens {
                        if masked && i == j {
                            continue;
                        }
                        let kj = kv.slice(s![j * batch + b, cols.clone()]);
                        scores[j] = qi.dot(&kj) * scale;
                        m = m.max(scores[j]);
                    }
                    if m == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut z = 0.0;
                    for j in 0..tokens {
                        if masked && i == j {
                            continue;
                        }
                        scores[j] = (scores[j] - m).exp();
                        z += scores[j];
                    }
                    let base = ((b * heads + h) * tokens + i) * tokens;
                    for j in 0..tokens {
                        if masked && i == j {
                            continue;
                        }
                        let a = scores[j] / z;
                        probs[base + j] = a;
                        let vj = vv.slice(s![j * batch + b, cols.clone()]);
                        let mut o = out.slice_mut(s![i * batch + b, cols.clone()]);
                        o.scaled_add(a, &vj);
                    }
                }
            }
        }
        let rg = self.rg(&[q, k, v]);
        self.push(
            Op::Attention {
                q,
                k,
                v,
                tokens,
                heads,
                masked,
                probs,
            },
            out,
            rg,
        )
    }

    /// `r[b] = sum_t w[t] * y[t * batch + b]` for a token-major column `y`.
    pub fn token_weighted_sum(&mut self, y: Var, w: Var, tokens: usize) -> Var {
        let yv = self.value(y);
        let wv = self.value(w);
        let batch = yv.nrows() / tokens;
        let mut out = Array2::<f64>::zeros((batch, 1));
        for t in 0..tokens {
            let wt = wv[[0, t]];
            for b in 0..batch {
                out[[b, 0]] += wt * yv[[t * batch + b, 0]];
            }
        }
        let rg = self.rg(&[y, w]);
        self.push(Op::TokenWeightedSum { y, w, tokens }, out, rg)
    }

    /// Mean focal negative log-likelihood of each group's target under the
    /// softmax of its rewards. `r` is a column.
    pub fn focal_nll(&mut self, r: Var, groups: &[Group], gamma: f64) -> Var {
        let rv = self.value(r).column(0).to_vec();
        let mut probs = vec![0.0; rv.len()];
        let mut total = 0.0;
        for g in groups {
            let lp = log_softmax(&rv[g.start..g.start + g.len]);
            for (j, l) in lp.iter().enumerate() {
                probs[g.start + j] = l.exp();
            }
            let p = probs[g.start + g.target];
            total += -focal_terms(p, gamma).0 * lp[g.target];
        }
        let loss = total / groups.len().max(1) as f64;
        let rg = self.rg(&[r]);
        self.push(
            Op::FocalNll {
                r,
                groups: groups.to_vec(),
                gamma,
                probs,
            },
            Array2::from_elem((1, 1), loss),
            rg,
        )
    }

    /// Gradients of the scalar `loss` with respect to each parameter slot.
    /// Slots not reached by the graph get `None`.
    pub fn backward(&self, loss: Var, n_params: usize) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones(self.nodes[loss.0].value.raw_dim()));
        let mut out: Vec<Option<Array2<f64>>> = (0..n_params).map(|_| None).collect();

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(x) => *x += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let need = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Input => {}
                Op::Param(p) => match &mut out[*p] {
                    Some(x) => *x += &g,
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    if need(b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                    if need(a) {
                        acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                }
                Op::AddRow(a, row) => {
                    if need(row) {
                        acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if need(a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if need(a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if need(b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &s| *d *= s * (1.0 - s));
                    acc(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &t| *d *= 1.0 - t * t);
                    acc(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut grads, *a, d);
                }
                Op::SliceRows(a, start, len) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![*start..*start + *len, ..]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::SliceCols(a, start, len) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![.., *start..*start + *len]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for p in parts {
                        let n = self.value(*p).nrows();
                        if need(p) {
                            acc(&mut grads, *p, g.slice(s![r0..r0 + n, ..]).to_owned());
                        }
                        r0 += n;
                    }
                }
                Op::Lstm {
                    x,
                    hc,
                    w_ih,
                    w_hh,
                    b,
                    hidden,
                    gates,
                    tanh_c,
                } => {
                    let hd = *hidden;
                    let n = g.nrows();
                    let mut dz = Array2::<f64>::zeros((n, 4 * hd));
                    let mut dhc_prev = hc.map(|_| Array2::<f64>::zeros((n, 2 * hd)));
                    for r in 0..n {
                        for j in 0..hd {
                            let (i, f, gg, o) = (gates[[r, j]], gates[[r, hd + j]], gates[[r, 2 * hd + j]], gates[[r, 3 * hd + j]]);
                            let tc = tanh_c[[r, j]];
                            let dh = g[[r, j]];
                            let dc = g[[r, hd + j]] + dh * o * (1.0 - tc * tc);
                            let c_prev = hc.map_or(0.0, |hc| self.nodes[hc.0].value[[r, hd + j]]);
                            dz[[r, j]] = dc * gg * i * (1.0 - i);
                            dz[[r, hd + j]] = dc * c_prev * f * (1.0 - f);
                            dz[[r, 2 * hd + j]] = dc * i * (1.0 - gg * gg);
                            dz[[r, 3 * hd + j]] = dh * tc * o * (1.0 - o);
                            if let Some(d) = &mut dhc_prev {
                                d[[r, hd + j]] = dc * f;
                            }
                        }
                    }
                    if need(w_ih) {
                        acc(&mut grads, *w_ih, self.value(*x).t().dot(&dz));
                    }
                    if need(x) {
                        acc(&mut grads, *x, dz.dot(&self.value(*w_ih).t()));
                    }
                    if need(b) {
                        acc(&mut grads, *b, dz.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if let (Some(hc), Some(mut d)) = (hc, dhc_prev) {
                        let h_prev = self.value(*hc).slice(s![.., ..hd]);
                        if need(w_hh) {
                            acc(&mut grads, *w_hh, h_prev.t().dot(&dz));
                        }
                        if need(hc) {
                            d.slice_mut(s![.., ..hd]).assign(&dz.dot(&self.value(*w_hh).t()));
                            acc(&mut grads, *hc, d);
                        }
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                    if need(beta) {
                        acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if need(gamma) {
                        acc(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if need(x) {
                        let dxhat = &g * &self.value(*gamma).row(0);
                        let m1 = dxhat.mean_axis(Axis(0)).unwrap();
                        let m2 = (&dxhat * xhat).mean_axis(Axis(0)).unwrap();
                        let dx = (&dxhat - &m1 - &(xhat * &m2)) * inv_std;
                        acc(&mut grads, *x, dx);
                    }
                }
                Op::Affine { gamma, beta, xhat } => {
                    if need(beta) {
                        acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if need(gamma) {
                        acc(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    tokens,
                    heads,
                    masked,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (rows, dim) = qv.dim();
                    let (t_n, h_n) = (*tokens, *heads);
                    let batch = rows / t_n;
                    let dh = dim / h_n;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Array2::<f64>::zeros((rows, dim));
                    let mut dk = Array2::<f64>::zeros((rows, dim));
                    let mut dv = Array2::<f64>::zeros((rows, dim));
                    let mut da = vec![0.0; t_n];
                    for b in 0..batch {
                        for h in 0..h_n {
                            let cols = h * dh..(h + 1) * dh;
                            for i in 0..t_n {
                                let base = ((b * h_n + h) * t_n + i) * t_n;
                                let gi = g.slice(s![i * batch + b, cols.clone()]);
                                let mut dot = 0.0;
                                for j in 0..t_n {
                                    if *masked && i == j {
                                        continue;
                                    }
                                    let a = probs[base + j];
                                    let vj = vv.slice(s![j * batch + b, cols.clone()]);
                                    da[j] = gi.dot(&vj);
                                    dot += a * da[j];
                                    dv.slice_mut(s![j * batch + b, cols.clone()]).scaled_add(a, &gi);
                                }
                                for j in 0..t_n {
                                    if *masked && i == j {
                                        continue;
                                    }
                                    let ds = probs[base + j] * (da[j] - dot) * scale;
                                    if ds == 0.0 {
                                        continue;
                                    }
                                    let kj = kv.slice(s![j * batch + b, cols.clone()]);
                                    dq.slice_mut(s![i * batch + b, cols.clone()]).scaled_add(ds, &kj);
                                    let qi = qv.slice(s![i * batch + b, cols.clone()]);
                                    dk.slice_mut(s![j * batch + b, cols.clone()]).scaled_add(ds, &qi);
                                }
                            }
                        }
                    }
                    if need(q) {
                        acc(&mut grads, *q, dq);
                    }
                    if need(k) {
                        acc(&mut grads, *k, dk);
                    }
                    if need(v) {
                        acc(&mut grads, *v, dv);
                    }
                }
                Op::TokenWeightedSum { y, w, tokens } => {
                    let yv = self.value(*y);
                    let wv = self.value(*w);
                    let batch = yv.nrows() / tokens;
                    if need(w) {
                        let mut dw = Array2::<f64>::zeros((1, *tokens));
                        for t in 0..*tokens {
                            dw[[0, t]] = (0..batch).map(|b| g[[b, 0]] * yv[[t * batch + b, 0]]).sum();
                        }
                        acc(&mut grads, *w, dw);
                    }
                    if need(y) {
                        let mut dy = Array2::<f64>::zeros(yv.raw_dim());
                        for t in 0..*tokens {
                            for b in 0..batch {
                                dy[[t * batch + b, 0]] = g[[b, 0]] * wv[[0, t]];
                            }
                        }
                        acc(&mut grads, *y, dy);
                    }
                }
                Op::FocalNll { r, groups, gamma, probs } => {
                    let scale = g[[0, 0]] / groups.len().max(1) as f64;
                    let mut dr = Array2::<f64>::zeros((probs.len(), 1));
                    for grp in groups {
                        let p = probs[grp.start + grp.target];
                        let (w, dw) = focal_terms(p, *gamma);
                        // loss = -w(p) ln p and dp/dr_j = p (delta_j - p_j)
                        let coeff = -dw * p * p.ln() - w;
                        for j in 0..grp.len {
                            let delta = if j == grp.target { 1.0 } else { 0.0 };
                            dr[[grp.start + j, 0]] = scale * coeff * (delta - probs[grp.start + j]);
                        }
                    }
                    acc(&mut grads, *r, dr);
                }
            }
        }
        out
    }

    /// Sign pattern of every ReLU input, for detecting kinks in finite differences.
    pub fn relu_signature(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(a) = n.op {
                out.extend(self.value(a).iter().map(|&x| x > 0.0));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_layer_gradients() {
        let mut t = Tape::new();
        let x = t.input(array![[1.0, 2.0], [3.0, -1.0]]);
        let w = t.param(0, array![[0.5], [-0.25]]);
        let b = t.param(1, array![[0.1]]);
        let y = t.linear(x, w, b);
        let r = t.token_weighted_sum(y, b, 1);
        let loss = t.focal_nll(r, &[Group { start: 0, len: 2, target: 0 }], 0.0);
        let grads = t.backward(loss, 2);
        assert!(grads[0].is_some() && grads[1].is_some());
    }

    #[test]
    fn masked_attention_ignores_own_value() {
        let mut t = Tape::new();
        let q = t.input(array![[1.0, 0.5], [0.2, -0.3], [0.7, 0.1]]);
        let k = t.input(array![[0.3, 0.9], [-0.4, 0.2], [0.5, -0.6]]);
        let v1 = t.input(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let v2 = t.input(array![[-9.0, 7.0], [3.0, 4.0], [5.0, 6.0]]);
        let a = t.attention(q, k, v1, 3, 1, true);
        let b = t.attention(q, k, v2, 3, 1, true);
        assert_eq!(t.value(a).row(0), t.value(b).row(0));
        assert_ne!(t.value(a).row(1), t.value(b).row(1));
    }
}
