//! Tape-based reverse-mode differentiation over single-image `(C, H, W)` tensors.
//!
//! A [`Graph`] records every operation in execution order, so the tape is
//! already topologically sorted and backward is a single reverse sweep.

use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(usize),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        /// im2col buffer, `(Cin*kh*kw) x (Ho*Wo)`; empty for 1x1 stride-1 convs.
        cols: Vec<T>,
    },
    Relu(Var),
    Add(Var, Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample2(Var),
    Concat(Var, Var),
    MseConst {
        x: Var,
        target: Tensor<T>,
    },
    ExpectationHuber {
        map: Var,
        weights: Tensor<T>,
        residual: Vec<T>,
        delta: T,
    },
    BilinearSample {
        map: Var,
        query: Var,
        inv_stride: T,
    },
    WeightedSum(Vec<(Var, T)>),
}

impl<T> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::Add(..) => "add",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::Upsample2(_) => "upsample2",
            Op::Concat(..) => "concat",
            Op::MseConst { .. } => "mse",
            Op::ExpectationHuber { .. } => "expectation_huber",
            Op::BilinearSample { .. } => "bilinear_sample",
            Op::WeightedSum(_) => "weighted_sum",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    section: &'static str,
    macs: u64,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].as_ref()
    }

    /// Per-parameter gradients indexed like the [`ParamStore`]; `None` when a
    /// parameter did not take part in the loss or was frozen.
    pub fn params(&self) -> &[Option<Tensor<T>>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Option<Tensor<T>>> {
        self.params
    }
}

/// A single forward pass and its tape.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    section: &'static str,
}

impl<T: Scalar> Graph<T> {
    /// Graph that records what is needed for backward.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: true,
            section: "",
        }
    }

    /// Inference-only graph: no parameter requires a gradient and no
    /// backward buffers are kept.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: false,
            section: "",
        }
    }

    /// Labels subsequently recorded nodes, for op and cost accounting.
    pub fn set_section(&mut self, section: &'static str) {
        self.section = section;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded ops of `kind` in `section` (any section when `None`).
    pub fn count_ops(&self, section: Option<&str>, kind: &str) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.op.kind() == kind && section.is_none_or(|s| s == n.section))
            .count()
    }

    /// Multiply-accumulate count of convolutions in `section` (all when `None`).
    pub fn macs(&self, section: Option<&str>) -> u64 {
        self.nodes
            .iter()
            .filter(|n| section.is_none_or(|s| s == n.section))
            .map(|n| n.macs)
            .sum()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, macs: u64) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
            section: self.section,
            macs,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; `requires_grad` is honoured only in training graphs.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Input, requires_grad, 0)
    }

    /// Trainable parameter leaf; frozen parameters behave as constants.
    pub fn param(&mut self, store: &ParamStore<T>, index: usize) -> Var {
        let requires = !store.is_frozen(index);
        self.push(store.value(index).clone(), Op::Param(index), requires, 0)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (cin, h, wd) = self.value(x).chw();
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || ws[1] != cin {
            return Err(Error::shape("conv2d", format!("input {:?} vs weight {ws:?}", self.value(x).shape())));
        }
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        if self.value(b).shape() != [cout] {
            return Err(Error::shape("conv2d", format!("bias {:?} for {cout} outputs", self.value(b).shape())));
        }
        if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} stride {stride} on {h}x{wd}")));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let n = ho * wo;
        let kdim = cin * kh * kw;
        let direct = kh == 1 && kw == 1 && stride == 1 && pad == 0;
        let cols = if direct {
            Vec::new()
        } else {
            im2col(self.value(x).data(), cin, h, wd, kh, kw, stride, pad, ho, wo)
        };
        let mut out = vec![T::zero(); cout * n];
        {
            let bias = self.value(b).data();
            for (co, row) in out.chunks_exact_mut(n).enumerate() {
                row.fill(bias[co]);
            }
            let rhs: &[T] = if direct { self.value(x).data() } else { &cols };
            T::gemm(
                cout,
                kdim,
                n,
                T::one(),
                self.value(w).data(),
                kdim as isize,
                1,
                rhs,
                n as isize,
                1,
                T::one(),
                &mut out,
                n as isize,
                1,
            );
        }
        let requires = self.rg(&[x, w, b]);
        let keep_cols = requires && self.grad_enabled && self.requires_grad(w);
        let op = Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
            cols: if keep_cols { cols } else { Vec::new() },
        };
        let macs = (cout * kdim * n) as u64;
        Ok(self.push(Tensor::from_vec(&[cout, ho, wo], out)?, op, requires, macs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::from_vec(self.value(x).shape(), data).expect("same shape");
        let requires = self.rg(&[x]);
        self.push(value, Op::Relu(x), requires, 0)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let requires = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), requires, 0))
    }

    /// 2x2 max pooling with stride 2; ties resolve to the first element in row-major order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("maxpool2", format!("odd spatial size {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            let base = ch * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let requires = self.rg(&[x]);
        let op = Op::MaxPool2 {
            x,
            argmax: if requires { argmax } else { Vec::new() },
        };
        Ok(self.push(Tensor::from_vec(&[c, ho, wo], out)?, op, requires, 0))
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * 4 * h * w);
        for ch in 0..c {
            for i in 0..2 * h {
                let row = &src[ch * h * w + (i / 2) * w..][..w];
                for &v in row {
                    out.push(v);
                    out.push(v);
                }
            }
        }
        let requires = self.rg(&[x]);
        let value = Tensor::from_vec(&[c, 2 * h, 2 * w], out).expect("upsample shape");
        self.push(value, Op::Upsample2(x), requires, 0)
    }

    /// Channel concatenation of two `(C, H, W)` tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw();
        let (cb, hb, wb) = self.value(b).chw();
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape("concat", format!("spatial {ha}x{wa} vs {hb}x{wb}")));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let requires = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_vec(&[ca + cb, ha, wa], data)?, Op::Concat(a, b), requires, 0))
    }

    /// Mean squared error against a constant target; scalar output.
    pub fn mse_const(&mut self, x: Var, target: Tensor<T>) -> Result<Var> {
        if self.value(x).shape() != target.shape() {
            return Err(Error::shape(
                "mse",
                format!("{:?} vs target {:?}", self.value(x).shape(), target.shape()),
            ));
        }
        let n = T::from_f64(target.len() as f64);
        let loss = self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / n;
        let requires = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(loss), Op::MseConst { x, target }, requires, 0))
    }

    /// `(1/J) * sum_j huber(gt_j - sum_{m,n} weights[j,m,n] * map[m,n])`.
    pub fn expectation_huber(&mut self, map: Var, weights: Tensor<T>, gt: &[T], delta: T) -> Result<Var> {
        let ms = self.value(map).shape().to_vec();
        let cells: usize = ms.iter().product();
        let ws = weights.shape();
        if ms.len() != 3 || ms[0] != 1 || ws.len() != 3 || ws[1..] != ms[1..] || ws[0] != gt.len() {
            return Err(Error::shape(
                "expectation_huber",
                format!("map {ms:?}, weights {ws:?}, {} labels", gt.len()),
            ));
        }
        let d = self.value(map).data();
        let residual: Vec<T> = weights
            .data()
            .chunks_exact(cells)
            .zip(gt)
            .map(|(w, &g)| g - w.iter().zip(d).map(|(&a, &b)| a * b).sum::<T>())
            .collect();
        let j = T::from_f64(gt.len() as f64);
        let loss = residual.iter().map(|&r| huber(r, delta)).sum::<T>() / j;
        let requires = self.rg(&[map]);
        let op = Op::ExpectationHuber {
            map,
            weights,
            residual,
            delta,
        };
        Ok(self.push(Tensor::scalar(loss), op, requires, 0))
    }

    /// Bilinear sampling of a `(1, Hd, Wd)` map at `(J, 2)` queries `(u, v)`
    /// given in input pixels; grid position is `query * inv_stride`, clamped
    /// to the border cells. Output shape `(J)`.
    pub fn bilinear_sample(&mut self, map: Var, query: Var, inv_stride: T) -> Result<Var> {
        let ms = self.value(map).shape().to_vec();
        let qs = self.value(query).shape().to_vec();
        if ms.len() != 3 || ms[0] != 1 || qs.len() != 2 || qs[1] != 2 {
            return Err(Error::shape("bilinear_sample", format!("map {ms:?}, query {qs:?}")));
        }
        let (hd, wd) = (ms[1], ms[2]);
        let d = self.value(map).data();
        let q = self.value(query).data();
        let out: Vec<T> = q
            .chunks_exact(2)
            .map(|uv| {
                let s = BilinearTap::new(uv[0] * inv_stride, uv[1] * inv_stride, hd, wd);
                s.eval(d, wd)
            })
            .collect();
        let requires = self.rg(&[map, query]);
        let value = Tensor::from_vec(&[qs[0]], out)?;
        Ok(self.push(value, Op::BilinearSample { map, query, inv_stride }, requires, 0))
    }

    /// `sum_i w_i * x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut acc = T::zero();
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::shape("weighted_sum", format!("non-scalar {:?}", self.value(v).shape())));
            }
            acc = acc + w * self.value(v).item();
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let requires = self.rg(&vars);
        Ok(self.push(Tensor::scalar(acc), Op::WeightedSum(terms.to_vec()), requires, 0))
    }

    /// Reverse sweep from a scalar `loss`, seeded with 1.
    pub fn backward(&self, loss: Var, num_params: usize) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params: Vec<Option<Tensor<T>>> = (0..num_params).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Gradients { nodes: grads, params };
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Input => {}
                Op::Param(index) => {
                    accumulate(&mut params[*index], &g);
                }
                Op::Conv2d { x, w, b, stride, pad, cols } => {
                    self.conv_backward(&g, *x, *w, *b, *stride, *pad, cols, &mut grads);
                }
                Op::Relu(x) => {
                    if self.nodes[x.0].requires_grad {
                        let mut dx = g.clone();
                        for (d, &v) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                            if v <= T::zero() {
                                *d = T::zero();
                            }
                        }
                        accumulate_owned(&mut grads[x.0], dx);
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if self.nodes[v.0].requires_grad {
                            accumulate(&mut grads[v.0], &g);
                        }
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    if self.nodes[x.0].requires_grad {
                        let mut dx = Tensor::zeros(self.value(*x).shape());
                        let dd = dx.data_mut();
                        for (&src, &gv) in argmax.iter().zip(g.data()) {
                            dd[src as usize] = dd[src as usize] + gv;
                        }
                        accumulate_owned(&mut grads[x.0], dx);
                    }
                }
                Op::Upsample2(x) => {
                    if self.nodes[x.0].requires_grad {
                        let (c, h, w) = self.value(*x).chw();
                        let mut dx = Tensor::zeros(&[c, h, w]);
                        let gd = g.data();
                        let dd = dx.data_mut();
                        for ch in 0..c {
                            for i in 0..2 * h {
                                for j in 0..2 * w {
                                    let dst = ch * h * w + (i / 2) * w + j / 2;
                                    dd[dst] = dd[dst] + gd[ch * 4 * h * w + i * 2 * w + j];
                                }
                            }
                        }
                        accumulate_owned(&mut grads[x.0], dx);
                    }
                }
                Op::Concat(a, b) => {
                    let na = self.value(*a).len();
                    if self.nodes[a.0].requires_grad {
                        let da = Tensor::from_vec(self.value(*a).shape(), g.data()[..na].to_vec()).expect("concat");
                        accumulate_owned(&mut grads[a.0], da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db = Tensor::from_vec(self.value(*b).shape(), g.data()[na..].to_vec()).expect("concat");
                        accumulate_owned(&mut grads[b.0], db);
                    }
                }
                Op::MseConst { x, target } => {
                    let k = g.item() * T::from_f64(2.0 / target.len() as f64);
                    let data = self.value(*x).data().iter().zip(target.data()).map(|(&a, &t)| k * (a - t)).collect();
                    let dx = Tensor::from_vec(target.shape(), data).expect("mse");
                    accumulate_owned(&mut grads[x.0], dx);
                }
                Op::ExpectationHuber {
                    map,
                    weights,
                    residual,
                    delta,
                } => {
                    let cells = self.value(*map).len();
                    let scale = g.item() / T::from_f64(residual.len() as f64);
                    let mut dm = Tensor::zeros(self.value(*map).shape());
                    let dd = dm.data_mut();
                    for (w, &r) in weights.data().chunks_exact(cells).zip(residual) {
                        // d/dD of huber(gt - <w, D>) = -huber'(r) * w
                        let k = -huber_grad(r, *delta) * scale;
                        for (o, &wv) in dd.iter_mut().zip(w) {
                            *o = *o + k * wv;
                        }
                    }
                    accumulate_owned(&mut grads[map.0], dm);
                }
                Op::BilinearSample { map, query, inv_stride } => {
                    let ms = self.value(*map).shape();
                    let (hd, wd) = (ms[1], ms[2]);
                    let d = self.value(*map).data();
                    let q = self.value(*query).data();
                    let mut dm = Tensor::zeros(ms);
                    let mut dq = Tensor::zeros(self.value(*query).shape());
                    for (j, (uv, &gj)) in q.chunks_exact(2).zip(g.data()).enumerate() {
                        let tap = BilinearTap::new(uv[0] * *inv_stride, uv[1] * *inv_stride, hd, wd);
                        tap.scatter(dm.data_mut(), wd, gj);
                        let (gx, gy) = tap.position_grad(d, wd);
                        dq.data_mut()[2 * j] = gj * gx * *inv_stride;
                        dq.data_mut()[2 * j + 1] = gj * gy * *inv_stride;
                    }
                    if self.nodes[map.0].requires_grad {
                        accumulate_owned(&mut grads[map.0], dm);
                    }
                    if self.nodes[query.0].requires_grad {
                        accumulate_owned(&mut grads[query.0], dq);
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        if self.nodes[v.0].requires_grad {
                            accumulate_owned(&mut grads[v.0], Tensor::scalar(g.item() * w));
                        }
                    }
                }
            }
            if matches!(node.op, Op::Input) {
                grads[id] = Some(g);
            }
        }
        Gradients { nodes: grads, params }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        g: &Tensor<T>,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        cols: &[T],
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (cin, h, wd) = self.value(x).chw();
        let ws = self.value(w).shape();
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        let (_, ho, wo) = g.chw();
        let n = ho * wo;
        let kdim = cin * kh * kw;
        let direct = kh == 1 && kw == 1 && stride == 1 && pad == 0;
        let gd = g.data();
        if self.nodes[b.0].requires_grad {
            let db: Vec<T> = gd.chunks_exact(n).map(|row| row.iter().copied().sum()).collect();
            accumulate_owned(&mut grads[b.0], Tensor::from_vec(&[cout], db).expect("bias"));
        }
        if self.nodes[w.0].requires_grad {
            let rhs: &[T] = if direct { self.value(x).data() } else { cols };
            let mut dw = Tensor::zeros(ws);
            // dW = dY * cols^T
            T::gemm(cout, n, kdim, T::one(), gd, n as isize, 1, rhs, 1, n as isize, T::zero(), dw.data_mut(), kdim as isize, 1);
            accumulate_owned(&mut grads[w.0], dw);
        }
        if self.nodes[x.0].requires_grad {
            let mut dcols = vec![T::zero(); kdim * n];
            // dcols = W^T * dY
            T::gemm(kdim, cout, n, T::one(), self.value(w).data(), 1, kdim as isize, gd, n as isize, 1, T::zero(), &mut dcols, n as isize, 1);
            let dx = if direct {
                dcols
            } else {
                col2im(&dcols, cin, h, wd, kh, kw, stride, pad, ho, wo)
            };
            accumulate_owned(&mut grads[x.0], Tensor::from_vec(&[cin, h, wd], dx).expect("conv dx"));
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: &Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}

fn accumulate_owned<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

pub fn huber<T: Scalar>(r: T, delta: T) -> T {
    let a = r.abs();
    if a <= delta {
        r * r / T::from_f64(2.0)
    } else {
        delta * (a - delta / T::from_f64(2.0))
    }
}

fn huber_grad<T: Scalar>(r: T, delta: T) -> T {
    if r.abs() <= delta {
        r
    } else {
        delta * r.signum()
    }
}

/// Bilinear read of a row-major `(h, w)` grid at column `x`, row `y`; positions
/// outside the grid clamp to the border cells.
pub fn bilinear_clamped<T: Scalar>(grid: &[T], h: usize, w: usize, x: T, y: T) -> T {
    BilinearTap::new(x, y, h, w).eval(grid, w)
}

/// Four-tap bilinear stencil with border clamping.
struct BilinearTap<T> {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    fx: T,
    fy: T,
    clamped_x: bool,
    clamped_y: bool,
}

impl<T: Scalar> BilinearTap<T> {
    fn new(x: T, y: T, hd: usize, wd: usize) -> Self {
        let (x0, x1, fx, clamped_x) = axis(x, wd);
        let (y0, y1, fy, clamped_y) = axis(y, hd);
        BilinearTap {
            x0,
            y0,
            x1,
            y1,
            fx,
            fy,
            clamped_x,
            clamped_y,
        }
    }

    fn eval(&self, d: &[T], wd: usize) -> T {
        let one = T::one();
        let at = |y: usize, x: usize| d[y * wd + x];
        (one - self.fy) * ((one - self.fx) * at(self.y0, self.x0) + self.fx * at(self.y0, self.x1))
            + self.fy * ((one - self.fx) * at(self.y1, self.x0) + self.fx * at(self.y1, self.x1))
    }

    fn scatter(&self, out: &mut [T], wd: usize, g: T) {
        let one = T::one();
        let taps = [
            (self.y0, self.x0, (one - self.fy) * (one - self.fx)),
            (self.y0, self.x1, (one - self.fy) * self.fx),
            (self.y1, self.x0, self.fy * (one - self.fx)),
            (self.y1, self.x1, self.fy * self.fx),
        ];
        for (y, x, w) in taps {
            out[y * wd + x] = out[y * wd + x] + g * w;
        }
    }

    /// Derivative with respect to the (unclamped) grid position.
    fn position_grad(&self, d: &[T], wd: usize) -> (T, T) {
        let one = T::one();
        let at = |y: usize, x: usize| d[y * wd + x];
        let gx = if self.clamped_x {
            T::zero()
        } else {
            (one - self.fy) * (at(self.y0, self.x1) - at(self.y0, self.x0))
                + self.fy * (at(self.y1, self.x1) - at(self.y1, self.x0))
        };
        let gy = if self.clamped_y {
            T::zero()
        } else {
            (one - self.fx) * (at(self.y1, self.x0) - at(self.y0, self.x0))
                + self.fx * (at(self.y1, self.x1) - at(self.y0, self.x1))
        };
        (gx, gy)
    }
}

fn axis<T: Scalar>(p: T, n: usize) -> (usize, usize, T, bool) {
    let hi = T::from_f64((n - 1) as f64);
    if !(p > T::zero()) {
        return (0, (n > 1) as usize, T::zero(), p < T::zero());
    }
    if p >= hi {
        let last = n - 1;
        return if n > 1 {
            (last - 1, last, T::one(), p > hi)
        } else {
            (0, 0, T::zero(), true)
        };
    }
    let f = p.floor();
    let i0 = f.as_f64() as usize;
    (i0, i0 + 1, p - f, false)
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let n = ho * wo;
    let mut cols = vec![T::zero(); cin * kh * kw * n];
    for c in 0..cin {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * n;
                let dst = &mut cols[row..row + n];
                for oi in 0..ho {
                    let iy = (oi * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let out_row = &mut dst[oi * wo..(oi + 1) * wo];
                    for (oj, o) in out_row.iter_mut().enumerate() {
                        let ix = (oj * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *o = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let n = ho * wo;
    let mut x = vec![T::zero(); cin * h * w];
    for c in 0..cin {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * n;
                let src = &cols[row..row + n];
                for oi in 0..ho {
                    let iy = (oi * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let ix = (oj * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            let dst = &mut plane[iy as usize * w + ix as usize];
                            *dst = *dst + src[oi * wo + oj];
                        }
                    }
                }
            }
        }
    }
    x
}
