//! Tape-based reverse-mode differentiation over dense `f64` arrays.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the tape
//! visits every node after all of its consumers.

use ndarray::{s, Array1, Array2, Array3, ArrayD, ArrayView1, ArrayView2, ArrayView3, Axis, Ix1, Ix2, Ix3, IxDyn, Zip};
use statrs::function::erf::erf;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    Add(Var, Var),
    MatMul(Var, Var),
    SoftmaxRows(Var),
    ChannelMix { w: Var, x: Var },
    SubjectMix { w: Var, x: Var, ids: Vec<usize> },
    ChannelBias { x: Var, b: Var },
    Conv1d { x: Var, w: Var, b: Var, dilation: usize },
    /// Normalisation over every axis but the channel axis (1).
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Array3<f64>, inv_std: Array1<f64>, batch_stats: bool },
    /// Normalisation over the channel axis (1) for every other index.
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array3<f64>, inv_std: Array2<f64> },
    Gelu(Var),
    Glu(Var),
    TimestepLinear { x: Var, w: Var, b: Var },
    TemporalAffine { x: Var, w: Var, b: Var },
    Linear { x: Var, w: Var, b: Var },
    Dropout { x: Var, mask: ArrayD<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: ArrayD<f64>,
    op: Op,
    needs_grad: bool,
}

/// Per-channel mean and biased variance observed by a batch-norm node.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    /// Number of values each statistic was computed from.
    pub count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn v1(a: &ArrayD<f64>) -> ArrayView1<'_, f64> {
    a.view().into_dimensionality::<Ix1>().expect("rank-1 tensor")
}

fn v2(a: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("rank-2 tensor")
}

fn v3(a: &ArrayD<f64>) -> ArrayView3<'_, f64> {
    a.view().into_dimensionality::<Ix3>().expect("rank-3 tensor")
}

/// Views a rank-2 `[B, C]` or rank-3 `[B, C, T]` tensor as rank 3.
fn as_bct(a: &ArrayD<f64>) -> ArrayView3<'_, f64> {
    match a.ndim() {
        2 => {
            let (b, c) = (a.shape()[0], a.shape()[1]);
            a.view().into_shape_with_order((b, c, 1)).expect("contiguous")
        }
        _ => v3(a),
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Index ranges `(out, in)` of a shift by `shift` samples over length `t`.
fn shifted_range(t: usize, shift: isize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let t = t as isize;
    let lo = (-shift).max(0);
    let hi = (t - shift).min(t);
    if hi <= lo {
        return (0..0, 0..0);
    }
    ((lo as usize)..(hi as usize), ((lo + shift) as usize)..((hi + shift) as usize))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A trainable leaf tagged with its parameter segment index.
    pub fn param(&mut self, segment: usize, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Param(segment), true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.needs(&[a, b]);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = v2(self.value(a)).dot(&v2(self.value(b))).into_dyn();
        let ng = self.needs(&[a, b]);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// Softmax along the last axis of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = v2(self.value(a)).to_owned();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row /= s;
        }
        let ng = self.needs(&[a]);
        self.push(out.into_dyn(), Op::SoftmaxRows(a), ng)
    }

    /// `y[b] = W · x[b]` for `W: [O, I]`, `x: [B, I, T]`.
    pub fn channel_mix(&mut self, w: Var, x: Var) -> Var {
        let (wv, xv) = (v2(self.value(w)), v3(self.value(x)));
        let (bsz, t) = (xv.shape()[0], xv.shape()[2]);
        let mut out = Array3::zeros((bsz, wv.nrows(), t));
        for b in 0..bsz {
            out.index_axis_mut(Axis(0), b).assign(&wv.dot(&xv.index_axis(Axis(0), b)));
        }
        let ng = self.needs(&[w, x]);
        self.push(out.into_dyn(), Op::ChannelMix { w, x }, ng)
    }

    /// `y[b] = W[ids[b]] · x[b]` for `W: [N, O, I]`.
    pub fn subject_mix(&mut self, w: Var, x: Var, ids: &[usize]) -> Var {
        let (wv, xv) = (v3(self.value(w)), v3(self.value(x)));
        let (bsz, t) = (xv.shape()[0], xv.shape()[2]);
        let mut out = Array3::zeros((bsz, wv.shape()[1], t));
        for b in 0..bsz {
            let wb = wv.index_axis(Axis(0), ids[b]);
            out.index_axis_mut(Axis(0), b).assign(&wb.dot(&xv.index_axis(Axis(0), b)));
        }
        let ng = self.needs(&[w, x]);
        self.push(out.into_dyn(), Op::SubjectMix { w, x, ids: ids.to_vec() }, ng)
    }

    /// Adds `b[c]` to every `x[:, c, :]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Var {
        let mut out = v3(self.value(x)).to_owned();
        let bv = v1(self.value(b));
        for (c, mut slab) in out.axis_iter_mut(Axis(1)).enumerate() {
            slab += bv[c];
        }
        let ng = self.needs(&[x, b]);
        self.push(out.into_dyn(), Op::ChannelBias { x, b }, ng)
    }

    /// Same-padded dilated convolution, `w: [O, I, K]` with odd `K`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Var {
        let (xv, wv, bv) = (v3(self.value(x)), v3(self.value(w)), v1(self.value(b)));
        let (bsz, t) = (xv.shape()[0], xv.shape()[2]);
        let (o, k) = (wv.shape()[0], wv.shape()[2]);
        let center = (k / 2) as isize;
        let mut out = Array3::zeros((bsz, o, t));
        for mut slab in out.axis_iter_mut(Axis(0)) {
            for (c, mut row) in slab.axis_iter_mut(Axis(0)).enumerate() {
                row.fill(bv[c]);
            }
        }
        for kk in 0..k {
            let shift = (kk as isize - center) * dilation as isize;
            let (ro, ri) = shifted_range(t, shift);
            if ro.is_empty() {
                continue;
            }
            let wk = wv.slice(s![.., .., kk]);
            for bb in 0..bsz {
                let xin = xv.slice(s![bb, .., ri.clone()]);
                let mut dst = out.slice_mut(s![bb, .., ro.clone()]);
                dst += &wk.dot(&xin);
            }
        }
        let ng = self.needs(&[x, w, b]);
        self.push(out.into_dyn(), Op::Conv1d { x, w, b, dilation }, ng)
    }

    /// Batch normalisation over `(batch, time)` per channel. With `running`
    /// given, those statistics are used instead of the batch's.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, running: Option<(&[f64], &[f64])>) -> (Var, BatchStats) {
        let xv = v3(self.value(x));
        let (bsz, c, t) = xv.dim();
        let count = bsz * t;
        let mut mean = Array1::zeros(c);
        let mut var = Array1::zeros(c);
        for ch in 0..c {
            let slab = xv.slice(s![.., ch, ..]);
            let m = slab.sum() / count as f64;
            mean[ch] = m;
            var[ch] = slab.iter().map(|v| (v - m).powi(2)).sum::<f64>() / count as f64;
        }
        let stats = BatchStats { mean: mean.clone(), var: var.clone(), count };
        let (use_mean, use_var) = match running {
            Some((m, v)) => (Array1::from(m.to_vec()), Array1::from(v.to_vec())),
            None => (mean, var),
        };
        let inv_std = use_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let mut xhat = xv.to_owned();
        for (ch, mut slab) in xhat.axis_iter_mut(Axis(1)).enumerate() {
            slab.mapv_inplace(|v| (v - use_mean[ch]) * inv_std[ch]);
        }
        let (g, bta) = (v1(self.value(gamma)), v1(self.value(beta)));
        let mut out = xhat.clone();
        for (ch, mut slab) in out.axis_iter_mut(Axis(1)).enumerate() {
            slab.mapv_inplace(|v| v * g[ch] + bta[ch]);
        }
        let ng = self.needs(&[x, gamma, beta]);
        let op = Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats: running.is_none() };
        (self.push(out.into_dyn(), op, ng), stats)
    }

    /// Layer normalisation over the channel axis of `[B, C]` or `[B, C, T]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let xv = as_bct(self.value(x));
        let (bsz, c, t) = xv.dim();
        let mut xhat = Array3::zeros((bsz, c, t));
        let mut inv_std = Array2::zeros((bsz, t));
        for b in 0..bsz {
            for tt in 0..t {
                let col = xv.slice(s![b, .., tt]);
                let m = col.sum() / c as f64;
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c as f64;
                let is = 1.0 / (var + LN_EPS).sqrt();
                inv_std[[b, tt]] = is;
                Zip::from(xhat.slice_mut(s![b, .., tt])).and(&col).for_each(|h, &v| *h = (v - m) * is);
            }
        }
        let (g, bta) = (v1(self.value(gamma)), v1(self.value(beta)));
        let mut out = xhat.clone();
        for (ch, mut slab) in out.axis_iter_mut(Axis(1)).enumerate() {
            slab.mapv_inplace(|v| v * g[ch] + bta[ch]);
        }
        let out = out.into_shape_with_order(IxDyn(&shape)).expect("same size");
        let ng = self.needs(&[x, gamma, beta]);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng)
    }

    /// Exact GELU, `x Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(gelu);
        let ng = self.needs(&[x]);
        self.push(out, Op::Gelu(x), ng)
    }

    /// Gated linear unit over the channel axis: `a ⊙ σ(g)` for `x = [a; g]`.
    pub fn glu(&mut self, x: Var) -> Var {
        let xv = v3(self.value(x));
        let c = xv.shape()[1] / 2;
        let a = xv.slice(s![.., ..c, ..]);
        let g = xv.slice(s![.., c.., ..]);
        let mut out = a.to_owned();
        Zip::from(&mut out).and(&g).for_each(|o, &gv| *o *= sigmoid(gv));
        let ng = self.needs(&[x]);
        self.push(out.into_dyn(), Op::Glu(x), ng)
    }

    /// Separate affine map per timestep: `y[:, :, t] = x[:, :, t] W[t]ᵀ + b[t]`
    /// with `W: [T, O, I]`, `b: [T, O]`.
    pub fn timestep_linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (v3(self.value(x)), v3(self.value(w)), v2(self.value(b)));
        let (bsz, _, t) = xv.dim();
        let o = wv.shape()[1];
        let mut out = Array3::zeros((bsz, o, t));
        for tt in 0..t {
            let y = xv.slice(s![.., .., tt]).dot(&wv.index_axis(Axis(0), tt).t()) + &bv.row(tt);
            out.slice_mut(s![.., .., tt]).assign(&y);
        }
        let ng = self.needs(&[x, w, b]);
        self.push(out.into_dyn(), Op::TimestepLinear { x, w, b }, ng)
    }

    /// `y[b, c] = Σ_t w[t] x[b, c, t] + bias`.
    pub fn temporal_affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv) = (v3(self.value(x)), v1(self.value(w)));
        let bias = self.value(b)[[0]];
        let (bsz, c, t) = xv.dim();
        let flat = xv.to_shape((bsz * c, t)).expect("reshape");
        let out = (flat.dot(&wv) + bias).into_shape_with_order((bsz, c)).expect("reshape");
        let ng = self.needs(&[x, w, b]);
        self.push(out.into_dyn(), Op::TemporalAffine { x, w, b }, ng)
    }

    /// `y = x Wᵀ + b` for `x: [B, I]`, `W: [O, I]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let out = v2(self.value(x)).dot(&v2(self.value(w)).t()) + &v1(self.value(b));
        let ng = self.needs(&[x, w, b]);
        self.push(out.into_dyn(), Op::Linear { x, w, b }, ng)
    }

    /// Elementwise product with a fixed (already rescaled) mask.
    pub fn dropout(&mut self, x: Var, mask: ArrayD<f64>) -> Var {
        let out = self.value(x) * &mask;
        let ng = self.needs(&[x]);
        self.push(out, Op::Dropout { x, mask }, ng)
    }

    /// Propagates `seeds` (node, cotangent) back through the tape and returns
    /// the gradient of every parameter node as `(segment, gradient)`.
    pub fn backward(&self, seeds: &[(Var, ArrayD<f64>)]) -> Vec<(usize, ArrayD<f64>)> {
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g.clone());
        }
        let mut out = Vec::new();
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, dy, &mut grads, &mut out);
        }
        out
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(
        &self,
        op: &Op,
        y: &ArrayD<f64>,
        dy: ArrayD<f64>,
        grads: &mut [Option<ArrayD<f64>>],
        out: &mut Vec<(usize, ArrayD<f64>)>,
    ) {
        match op {
            Op::Constant => {}
            Op::Param(seg) => out.push((*seg, dy)),
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, dy.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, dy);
                }
            }
            Op::MatMul(a, b) => {
                let d = v2(&dy);
                if self.wants(*a) {
                    accumulate(grads, *a, d.dot(&v2(self.value(*b)).t()).into_dyn());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, v2(self.value(*a)).t().dot(&d).into_dyn());
                }
            }
            Op::SoftmaxRows(a) => {
                let (yv, d) = (v2(y), v2(&dy));
                let mut dx = Array2::zeros(yv.dim());
                for ((mut dr, yr), gr) in dx.rows_mut().into_iter().zip(yv.rows()).zip(d.rows()) {
                    let inner = yr.dot(&gr);
                    Zip::from(&mut dr).and(&yr).and(&gr).for_each(|o, &p, &g| *o = p * (g - inner));
                }
                accumulate(grads, *a, dx.into_dyn());
            }
            Op::ChannelMix { w, x } => {
                let (wv, xv, d) = (v2(self.value(*w)), v3(self.value(*x)), v3(&dy));
                if self.wants(*w) {
                    let mut dw = Array2::zeros(wv.dim());
                    for b in 0..xv.shape()[0] {
                        dw += &d.index_axis(Axis(0), b).dot(&xv.index_axis(Axis(0), b).t());
                    }
                    accumulate(grads, *w, dw.into_dyn());
                }
                if self.wants(*x) {
                    let mut dx = Array3::zeros(xv.dim());
                    for b in 0..xv.shape()[0] {
                        dx.index_axis_mut(Axis(0), b).assign(&wv.t().dot(&d.index_axis(Axis(0), b)));
                    }
                    accumulate(grads, *x, dx.into_dyn());
                }
            }
            Op::SubjectMix { w, x, ids } => {
                let (wv, xv, d) = (v3(self.value(*w)), v3(self.value(*x)), v3(&dy));
                if self.wants(*w) {
                    let mut dw = Array3::zeros(wv.dim());
                    for (b, &s) in ids.iter().enumerate() {
                        let g = d.index_axis(Axis(0), b).dot(&xv.index_axis(Axis(0), b).t());
                        let mut slot = dw.index_axis_mut(Axis(0), s);
                        slot += &g;
                    }
                    accumulate(grads, *w, dw.into_dyn());
                }
                if self.wants(*x) {
                    let mut dx = Array3::zeros(xv.dim());
                    for (b, &s) in ids.iter().enumerate() {
                        let wb = wv.index_axis(Axis(0), s);
                        dx.index_axis_mut(Axis(0), b).assign(&wb.t().dot(&d.index_axis(Axis(0), b)));
                    }
                    accumulate(grads, *x, dx.into_dyn());
                }
            }
            Op::ChannelBias { x, b } => {
                if self.wants(*b) {
                    let d = v3(&dy);
                    let db: Array1<f64> = d.axis_iter(Axis(1)).map(|s| s.sum()).collect();
                    accumulate(grads, *b, db.into_dyn());
                }
                if self.wants(*x) {
                    accumulate(grads, *x, dy);
                }
            }
            Op::Conv1d { x, w, b, dilation } => {
                let (xv, wv, d) = (v3(self.value(*x)), v3(self.value(*w)), v3(&dy));
                let (bsz, _, t) = xv.dim();
                let k = wv.shape()[2];
                let center = (k / 2) as isize;
                let mut dx = Array3::zeros(xv.dim());
                let mut dw = Array3::zeros(wv.dim());
                for kk in 0..k {
                    let shift = (kk as isize - center) * *dilation as isize;
                    let (ro, ri) = shifted_range(t, shift);
                    if ro.is_empty() {
                        continue;
                    }
                    let wk = wv.slice(s![.., .., kk]);
                    let mut dwk = Array2::zeros((wv.shape()[0], wv.shape()[1]));
                    for bb in 0..bsz {
                        let g = d.slice(s![bb, .., ro.clone()]);
                        let xin = xv.slice(s![bb, .., ri.clone()]);
                        dwk += &g.dot(&xin.t());
                        let mut dst = dx.slice_mut(s![bb, .., ri.clone()]);
                        dst += &wk.t().dot(&g);
                    }
                    dw.slice_mut(s![.., .., kk]).assign(&dwk);
                }
                if self.wants(*b) {
                    let db: Array1<f64> = d.axis_iter(Axis(1)).map(|s| s.sum()).collect();
                    accumulate(grads, *b, db.into_dyn());
                }
                if self.wants(*w) {
                    accumulate(grads, *w, dw.into_dyn());
                }
                if self.wants(*x) {
                    accumulate(grads, *x, dx.into_dyn());
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let d = v3(&dy);
                let g = v1(self.value(*gamma));
                let c = xhat.shape()[1];
                let mut dgamma = Array1::zeros(c);
                let mut dbeta = Array1::zeros(c);
                let mut dx = Array3::zeros(xhat.dim());
                for ch in 0..c {
                    let dys = d.slice(s![.., ch, ..]);
                    let xh = xhat.slice(s![.., ch, ..]);
                    let sum_dy = dys.sum();
                    let sum_dy_xh: f64 = Zip::from(&dys).and(&xh).fold(0.0, |acc, a, b| acc + a * b);
                    dgamma[ch] = sum_dy_xh;
                    dbeta[ch] = sum_dy;
                    let scale = g[ch] * inv_std[ch];
                    let mut dst = dx.slice_mut(s![.., ch, ..]);
                    if *batch_stats {
                        let m = dys.len() as f64;
                        let (mdy, mdyx) = (sum_dy / m, sum_dy_xh / m);
                        Zip::from(&mut dst).and(&dys).and(&xh).for_each(|o, &a, &h| *o = scale * (a - mdy - h * mdyx));
                    } else {
                        Zip::from(&mut dst).and(&dys).for_each(|o, &a| *o = scale * a);
                    }
                }
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, dgamma.into_dyn());
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, dbeta.into_dyn());
                }
                if self.wants(*x) {
                    accumulate(grads, *x, dx.into_dyn());
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let shape = dy.shape().to_vec();
                let d = as_bct(&dy);
                let g = v1(self.value(*gamma));
                let (bsz, c, t) = xhat.dim();
                let mut dgamma = Array1::zeros(c);
                let mut dbeta = Array1::zeros(c);
                let mut dx = Array3::zeros((bsz, c, t));
                for b in 0..bsz {
                    for tt in 0..t {
                        let dys = d.slice(s![b, .., tt]);
                        let xh = xhat.slice(s![b, .., tt]);
                        let gy: Array1<f64> = Zip::from(&dys).and(&g).map_collect(|a, w| a * w);
                        let mean_gy = gy.sum() / c as f64;
                        let mean_gyx = gy.dot(&xh) / c as f64;
                        let is = inv_std[[b, tt]];
                        Zip::from(dx.slice_mut(s![b, .., tt]))
                            .and(&gy)
                            .and(&xh)
                            .for_each(|o, &a, &h| *o = is * (a - mean_gy - h * mean_gyx));
                        Zip::from(&mut dgamma).and(&dys).and(&xh).for_each(|o, &a, &h| *o += a * h);
                        Zip::from(&mut dbeta).and(&dys).for_each(|o, &a| *o += a);
                    }
                }
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, dgamma.into_dyn());
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, dbeta.into_dyn());
                }
                if self.wants(*x) {
                    let dx = dx.into_shape_with_order(IxDyn(&shape)).expect("same size");
                    accumulate(grads, *x, dx);
                }
            }
            Op::Gelu(x) => {
                let mut dx = self.value(*x).mapv(|v| normal_cdf(v) + v * normal_pdf(v));
                dx *= &dy;
                accumulate(grads, *x, dx);
            }
            Op::Glu(x) => {
                let xv = v3(self.value(*x));
                let c = xv.shape()[1] / 2;
                let d = v3(&dy);
                let mut dx = Array3::zeros(xv.dim());
                let a = xv.slice(s![.., ..c, ..]);
                let g = xv.slice(s![.., c.., ..]);
                Zip::from(dx.slice_mut(s![.., ..c, ..])).and(&d).and(&g).for_each(|o, &dd, &gv| *o = dd * sigmoid(gv));
                Zip::from(dx.slice_mut(s![.., c.., ..])).and(&d).and(&a).and(&g).for_each(|o, &dd, &av, &gv| {
                    let sg = sigmoid(gv);
                    *o = dd * av * sg * (1.0 - sg);
                });
                accumulate(grads, *x, dx.into_dyn());
            }
            Op::TimestepLinear { x, w, b } => {
                let (xv, wv, d) = (v3(self.value(*x)), v3(self.value(*w)), v3(&dy));
                let t = xv.shape()[2];
                let mut dx = Array3::zeros(xv.dim());
                let mut dw = Array3::zeros(wv.dim());
                let mut db = Array2::zeros((t, wv.shape()[1]));
                for tt in 0..t {
                    let dt = d.slice(s![.., .., tt]);
                    let xt = xv.slice(s![.., .., tt]);
                    dw.index_axis_mut(Axis(0), tt).assign(&dt.t().dot(&xt));
                    dx.slice_mut(s![.., .., tt]).assign(&dt.dot(&wv.index_axis(Axis(0), tt)));
                    db.row_mut(tt).assign(&dt.sum_axis(Axis(0)));
                }
                if self.wants(*w) {
                    accumulate(grads, *w, dw.into_dyn());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, db.into_dyn());
                }
                if self.wants(*x) {
                    accumulate(grads, *x, dx.into_dyn());
                }
            }
            Op::TemporalAffine { x, w, b } => {
                let (xv, wv, d) = (v3(self.value(*x)), v1(self.value(*w)), v2(&dy));
                if self.wants(*w) {
                    let mut dw = Array1::zeros(wv.len());
                    for (bb, row) in d.rows().into_iter().enumerate() {
                        dw += &row.dot(&xv.index_axis(Axis(0), bb));
                    }
                    accumulate(grads, *w, dw.into_dyn());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, ndarray::arr1(&[d.sum()]).into_dyn());
                }
                if self.wants(*x) {
                    let mut dx = Array3::zeros(xv.dim());
                    Zip::indexed(&mut dx).for_each(|(bb, c, t), o| *o = d[[bb, c]] * wv[t]);
                    accumulate(grads, *x, dx.into_dyn());
                }
            }
            Op::Linear { x, w, b } => {
                let d = v2(&dy);
                if self.wants(*w) {
                    accumulate(grads, *w, d.t().dot(&v2(self.value(*x))).into_dyn());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, d.sum_axis(Axis(0)).into_dyn());
                }
                if self.wants(*x) {
                    accumulate(grads, *x, d.dot(&v2(self.value(*w))).into_dyn());
                }
            }
            Op::Dropout { x, mask } => accumulate(grads, *x, dy * mask),
        }
    }
}

fn accumulate(grads: &mut [Option<ArrayD<f64>>], v: Var, g: ArrayD<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}
