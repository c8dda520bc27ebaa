//! Reverse-mode differentiation over 2-D `f64` matrices.
//!
//! A [`Graph`] records every operation as a node in evaluation order, so a
//! single reverse sweep propagates gradients. Sequence tensors use a
//! time-major row layout: row `t * batch + b` holds frame `t` of batch item
//! `b`.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis};
use rustfft::num_complex::Complex64;

use super::params::{ParamId, ParamStore};
use crate::signal::{SpectrogramGeometry, StftPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Expm1(Var),
    Log1p(Var),
    Abs(Var),
    Magnitude(Var, Var),
    SumAll(Var),
    MeanAll(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Softmax(Var),
    WeightedSum(Var, Vec<Var>),
    GruCell(Box<GruCache>),
    Stft {
        input: Var,
        geometry: SpectrogramGeometry,
    },
    Istft {
        input: Var,
        geometry: SpectrogramGeometry,
    },
    /// Scalar op whose input gradient was computed during the forward pass.
    Fused { input: Var, grad: Array2<f64> },
}

#[derive(Debug)]
struct GruCache {
    xp: Var,
    h: Var,
    u: Var,
    bu: Var,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    an: Array2<f64>,
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
    param_vars: HashMap<ParamId, Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A leaf that receives a gradient but is not a stored parameter.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant, true)
    }

    /// Leaf for a stored parameter; repeated calls reuse the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId, trainable: bool) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param, trainable);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// Adds a `1 x C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(v, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn expm1(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp_m1);
        let rg = self.rg(a);
        self.push(v, Op::Expm1(a), rg)
    }

    pub fn log1p(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln_1p);
        let rg = self.rg(a);
        self.push(v, Op::Log1p(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        let rg = self.rg(a);
        self.push(v, Op::Abs(a), rg)
    }

    /// Elementwise `sqrt(re^2 + im^2)`.
    pub fn magnitude(&mut self, re: Var, im: Var) -> Var {
        let mut v = self.value(re).clone();
        v.zip_mut_with(self.value(im), |a, b| *a = a.hypot(*b));
        let rg = self.rg(re) || self.rg(im);
        self.push(v, Op::Magnitude(re, im), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        let rg = self.rg(a);
        self.push(v, Op::MeanAll(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts must agree");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(v, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(a);
        self.push(v, Op::SliceRows(a, start), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(a);
        self.push(v, Op::SliceCols(a, start), rg)
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Var {
        let x = self.value(a);
        let v = Array2::from_shape_fn((index.len(), x.ncols()), |(i, j)| x[[index[i], j]]);
        let rg = self.rg(a);
        self.push(v, Op::GatherRows(a, index), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.outer_iter_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, x| m.max(*x));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let rg = self.rg(a);
        self.push(v, Op::Softmax(a), rg)
    }

    /// `sum_l weights[0, l] * layers[l]`.
    pub fn weighted_sum(&mut self, weights: Var, layers: &[Var]) -> Var {
        let w = self.value(weights);
        assert_eq!(w.len(), layers.len(), "one weight per layer");
        let mut v = Array2::zeros(self.value(layers[0]).dim());
        for (l, layer) in layers.iter().enumerate() {
            v.scaled_add(w[[0, l]], self.value(*layer));
        }
        let rg = self.rg(weights) || layers.iter().any(|l| self.rg(*l));
        self.push(v, Op::WeightedSum(weights, layers.to_vec()), rg)
    }

    /// One gated recurrent step.
    ///
    /// `xp` is the input projection `[x W_r, x W_z, x W_n] + b` (B x 3H),
    /// `u` the recurrent matrix (H x 3H) and `bu` its bias (1 x 3H):
    ///
    /// ```text
    /// r = sigmoid(xp_r + (h U + bu)_r)
    /// z = sigmoid(xp_z + (h U + bu)_z)
    /// n = tanh(xp_n + r * (h U + bu)_n)
    /// h' = (1 - z) * n + z * h
    /// ```
    pub fn gru_cell(&mut self, xp: Var, h: Var, u: Var, bu: Var) -> Var {
        let hv = self.value(h);
        let hidden = hv.ncols();
        let a = hv.dot(self.value(u)) + self.value(bu);
        let x = self.value(xp);
        let (rows, _) = x.dim();
        let mut r = Array2::zeros((rows, hidden));
        let mut z = Array2::zeros((rows, hidden));
        let mut n = Array2::zeros((rows, hidden));
        let mut out = Array2::zeros((rows, hidden));
        for i in 0..rows {
            for j in 0..hidden {
                let rv = sigmoid(x[[i, j]] + a[[i, j]]);
                let zv = sigmoid(x[[i, hidden + j]] + a[[i, hidden + j]]);
                let nv = (x[[i, 2 * hidden + j]] + rv * a[[i, 2 * hidden + j]]).tanh();
                r[[i, j]] = rv;
                z[[i, j]] = zv;
                n[[i, j]] = nv;
                out[[i, j]] = (1.0 - zv) * nv + zv * hv[[i, j]];
            }
        }
        let an = a.slice(s![.., 2 * hidden..]).to_owned();
        let rg = self.rg(xp) || self.rg(h) || self.rg(u) || self.rg(bu);
        self.push(
            out,
            Op::GruCell(Box::new(GruCache {
                xp,
                h,
                u,
                bu,
                r,
                z,
                n,
                an,
            })),
            rg,
        )
    }

    /// Batched centered STFT of the rows of `signals` (B x N). The result is
    /// time-major (`T*B` rows) with `[re | im]` columns.
    pub fn stft(&mut self, signals: Var, geometry: SpectrogramGeometry) -> Var {
        let plan = StftPlan::new(geometry).expect("validated geometry");
        let x = self.value(signals);
        let (batch, len) = x.dim();
        let frames = geometry.n_frames(len);
        let bins = geometry.bins();
        let mut v = Array2::zeros((frames * batch, 2 * bins));
        for b in 0..batch {
            let row = x.row(b).to_vec();
            let spec = plan.analyze(&row);
            for t in 0..frames {
                let mut out = v.row_mut(t * batch + b);
                for k in 0..bins {
                    out[k] = spec[[t, k]].re;
                    out[bins + k] = spec[[t, k]].im;
                }
            }
        }
        let rg = self.rg(signals);
        self.push(v, Op::Stft { input: signals, geometry }, rg)
    }

    /// Inverse of [`stft`](Self::stft) for `batch` signals of `len` samples.
    pub fn istft(
        &mut self,
        spec: Var,
        geometry: SpectrogramGeometry,
        batch: usize,
        len: usize,
    ) -> Var {
        let plan = StftPlan::new(geometry).expect("validated geometry");
        let x = self.value(spec);
        let bins = geometry.bins();
        let frames = x.nrows() / batch;
        let mut v = Array2::zeros((batch, len));
        for b in 0..batch {
            let c = Array2::from_shape_fn((frames, bins), |(t, k)| {
                let row = x.row(t * batch + b);
                Complex64::new(row[k], row[bins + k])
            });
            let y = plan
                .synthesize(c.view(), len)
                .expect("frames cover the requested length");
            v.row_mut(b).assign(&ndarray::Array1::from(y));
        }
        let rg = self.rg(spec);
        self.push(v, Op::Istft { input: spec, geometry }, rg)
    }

    /// Records a scalar computed outside the graph together with its
    /// gradient with respect to `input`.
    pub fn fused_scalar(&mut self, input: Var, value: f64, grad: Array2<f64>) -> Var {
        debug_assert_eq!(grad.dim(), self.value(input).dim());
        let rg = self.rg(input);
        self.push(
            Array2::from_elem((1, 1), value),
            Op::Fused { input, grad },
            rg,
        )
    }

    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every parameter leaf touched by the last backward pass.
    pub fn param_grads(&self) -> Vec<(ParamId, Array2<f64>)> {
        let mut out: Vec<(ParamId, Array2<f64>)> = self
            .param_vars
            .iter()
            .filter_map(|(id, v)| self.grad(*v).map(|g| (*id, g.clone())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Reverse sweep from a `1 x 1` node.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (lo, hi) = self.grads.split_at_mut(i);
            let Some(g) = hi[0].as_ref() else { continue };
            let nodes = &self.nodes;
            let node = &nodes[i];
            let mut acc = |v: Var, delta: Array2<f64>| {
                if nodes[v.0].requires_grad {
                    match &mut lo[v.0] {
                        Some(existing) => *existing += &delta,
                        slot @ None => *slot = Some(delta),
                    }
                }
            };
            match &node.op {
                Op::Constant | Op::Param => {}
                Op::MatMul(a, b) => {
                    if nodes[a.0].requires_grad {
                        acc(*a, g.dot(&nodes[b.0].value.t()));
                    }
                    if nodes[b.0].requires_grad {
                        acc(*b, nodes[a.0].value.t().dot(g));
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    acc(*a, g * &nodes[b.0].value);
                    acc(*b, g * &nodes[a.0].value);
                }
                Op::AddRow(a, row) => {
                    acc(*a, g.clone());
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Scale(a, c) => acc(*a, g * *c),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, g * &y.mapv(|v| v * (1.0 - v)));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, g * &y.mapv(|v| 1.0 - v * v));
                }
                Op::Expm1(a) => acc(*a, g * &node.value.mapv(|v| v + 1.0)),
                Op::Log1p(a) => acc(*a, g / &nodes[a.0].value.mapv(|v| 1.0 + v)),
                Op::Abs(a) => {
                    let x = &nodes[a.0].value;
                    let mut d = g.clone();
                    d.zip_mut_with(x, |d, x| {
                        *d *= if *x > 0.0 {
                            1.0
                        } else if *x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(*a, d);
                }
                Op::Magnitude(re, im) => {
                    let y = &node.value;
                    let inv = y.mapv(|m| if m > 0.0 { 1.0 / m } else { 0.0 });
                    let gi = g * &inv;
                    acc(*re, &gi * &nodes[re.0].value);
                    acc(*im, &gi * &nodes[im.0].value);
                }
                Op::SumAll(a) => {
                    acc(*a, Array2::from_elem(nodes[a.0].value.dim(), g[[0, 0]]));
                }
                Op::MeanAll(a) => {
                    let x = &nodes[a.0].value;
                    acc(*a, Array2::from_elem(x.dim(), g[[0, 0]] / x.len() as f64));
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = nodes[p.0].value.ncols();
                        acc(*p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = nodes[p.0].value.nrows();
                        acc(*p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    if nodes[a.0].requires_grad {
                        let dim = nodes[a.0].value.dim();
                        let slot = lo[a.0].get_or_insert_with(|| Array2::zeros(dim));
                        let mut view = slot.slice_mut(s![*start..*start + g.nrows(), ..]);
                        view += g;
                    }
                }
                Op::SliceCols(a, start) => {
                    if nodes[a.0].requires_grad {
                        let dim = nodes[a.0].value.dim();
                        let slot = lo[a.0].get_or_insert_with(|| Array2::zeros(dim));
                        let mut view = slot.slice_mut(s![.., *start..*start + g.ncols()]);
                        view += g;
                    }
                }
                Op::GatherRows(a, index) => {
                    let mut d = Array2::zeros(nodes[a.0].value.dim());
                    for (i, &src) in index.iter().enumerate() {
                        let mut row = d.row_mut(src);
                        row += &g.row(i);
                    }
                    acc(*a, d);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut d = g * y;
                    for (mut drow, yrow) in d.outer_iter_mut().zip(y.outer_iter()) {
                        let s = drow.sum();
                        drow.zip_mut_with(&yrow, |dv, yv| *dv -= yv * s);
                    }
                    acc(*a, d);
                }
                Op::WeightedSum(w, layers) => {
                    let wv = &nodes[w.0].value;
                    if nodes[w.0].requires_grad {
                        let gw = Array2::from_shape_fn((1, layers.len()), |(_, l)| {
                            (g * &nodes[layers[l].0].value).sum()
                        });
                        acc(*w, gw);
                    }
                    for (l, layer) in layers.iter().enumerate() {
                        if nodes[layer.0].requires_grad {
                            acc(*layer, g * wv[[0, l]]);
                        }
                    }
                }
                Op::GruCell(c) => {
                    let h = &nodes[c.h.0].value;
                    let hidden = h.ncols();
                    let rows = h.nrows();
                    let mut ga = Array2::zeros((rows, 3 * hidden));
                    let mut gxp = Array2::zeros((rows, 3 * hidden));
                    let mut gh = Array2::zeros((rows, hidden));
                    for i in 0..rows {
                        for j in 0..hidden {
                            let gy = g[[i, j]];
                            let (r, z, n) = (c.r[[i, j]], c.z[[i, j]], c.n[[i, j]]);
                            let gz = gy * (h[[i, j]] - n);
                            let gn = gy * (1.0 - z);
                            gh[[i, j]] = gy * z;
                            let gnp = gn * (1.0 - n * n);
                            let grp = gnp * c.an[[i, j]] * r * (1.0 - r);
                            let gzp = gz * z * (1.0 - z);
                            ga[[i, j]] = grp;
                            ga[[i, hidden + j]] = gzp;
                            ga[[i, 2 * hidden + j]] = gnp * r;
                            gxp[[i, j]] = grp;
                            gxp[[i, hidden + j]] = gzp;
                            gxp[[i, 2 * hidden + j]] = gnp;
                        }
                    }
                    if nodes[c.xp.0].requires_grad {
                        acc(c.xp, gxp);
                    }
                    let uv = &nodes[c.u.0].value;
                    if nodes[c.u.0].requires_grad {
                        acc(c.u, h.t().dot(&ga));
                    }
                    if nodes[c.bu.0].requires_grad {
                        acc(c.bu, ga.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if nodes[c.h.0].requires_grad {
                        acc(c.h, gh + ga.dot(&uv.t()));
                    }
                }
                Op::Stft { input, geometry } => {
                    let plan = StftPlan::new(*geometry).expect("validated geometry");
                    let (batch, len) = nodes[input.0].value.dim();
                    let bins = geometry.bins();
                    let frames = g.nrows() / batch;
                    let mut d = Array2::zeros((batch, len));
                    for b in 0..batch {
                        let c = Array2::from_shape_fn((frames, bins), |(t, k)| {
                            let row = g.row(t * batch + b);
                            Complex64::new(row[k], row[bins + k])
                        });
                        let gx = plan.analyze_adjoint(c.view(), len);
                        d.row_mut(b).assign(&ndarray::Array1::from(gx));
                    }
                    acc(*input, d);
                }
                Op::Istft { input, geometry } => {
                    let plan = StftPlan::new(*geometry).expect("validated geometry");
                    let (rows, cols) = nodes[input.0].value.dim();
                    let batch = g.nrows();
                    let frames = rows / batch;
                    let bins = geometry.bins();
                    let mut d = Array2::zeros((rows, cols));
                    for b in 0..batch {
                        let gy = g.row(b).to_vec();
                        let gs = plan.synthesize_adjoint(&gy, frames);
                        for t in 0..frames {
                            let mut out = d.row_mut(t * batch + b);
                            for k in 0..bins {
                                out[k] = gs[[t, k]].re;
                                out[bins + k] = gs[[t, k]].im;
                            }
                        }
                    }
                    acc(*input, d);
                }
                Op::Fused { input, grad } => acc(*input, grad * g[[0, 0]]),
            }
        }
    }
}
