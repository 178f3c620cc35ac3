//! Define-by-run tape: every forward primitive appends one record, `backward`
//! replays the records in reverse.

use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::tensor::{check_same, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// Lower clamp applied to BCE predictions (and `1 - BCE_EPS` as the upper one).
pub const BCE_EPS: f64 = 1e-7;

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        k: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        c_out: usize,
        cols: Vec<T>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Upsample2x(Var),
    Crop {
        x: Var,
        top: usize,
        left: usize,
        size: usize,
    },
    Gather(Var, Vec<usize>),
    StackRows(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SmoothL1(Var, Tensor<T>),
    Bce(Var, Tensor<T>),
    Mse(Var, Tensor<T>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records forward primitives in topological order.
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Tape that records no gradient dependencies; every value is a constant.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        if v.tape != self.id {
            return Err(Error::Tape(format!(
                "value belongs to tape {} but was used on tape {}",
                v.tape, self.id
            )));
        }
        Ok(&self.nodes[v.idx])
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "value from a different tape");
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        v.tape == self.id && self.nodes[v.idx].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Free leaf whose gradient is reported by [`Gradients::get`].
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled;
        self.push(t, Op::Leaf, rg)
    }

    /// Brings a stored parameter onto the tape. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let rg = p.trainable && self.grad_enabled;
        self.push(p.value.clone(), Op::Param(id), rg)
    }

    /// Looks a parameter up by name.
    pub fn param_named(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let id = store
            .id(name)
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))?;
        Ok(self.param(store, id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::Dimension(format!(
                "matmul: incompatible shapes {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Same-padded square-kernel cross-correlation of `x: C_in×H×W` with
    /// `k: C_out×C_in×s×s` (odd `s`), optional per-channel bias.
    pub fn conv2d(&mut self, x: Var, k: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let (xv, kv) = (&self.node(x)?.value, &self.node(k)?.value);
        if xv.ndim() != 3 || kv.ndim() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d: expected C×H×W input and 4-D kernel, got {:?} and {:?}",
                xv.shape(),
                kv.shape()
            )));
        }
        let (c_out, c_in, kh, kw) = (kv.shape()[0], kv.shape()[1], kv.shape()[2], kv.shape()[3]);
        if c_in != xv.shape()[0] {
            return Err(Error::Dimension(format!(
                "conv2d: input has {} channels, kernel {:?} expects {c_in}",
                xv.shape()[0],
                kv.shape()
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Dimension(format!(
                "conv2d: kernel must be square with odd size, got {:?}",
                kv.shape()
            )));
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::Argument(format!(
                "conv2d: stride {stride} not in {{1, 2}}"
            )));
        }
        let (h, w) = (xv.shape()[1], xv.shape()[2]);
        if h < kh || w < kh {
            return Err(Error::Dimension(format!(
                "conv2d: spatial size {h}×{w} smaller than kernel {kh}×{kh}"
            )));
        }
        if let Some(b) = bias {
            let bv = &self.node(b)?.value;
            if bv.len() != c_out {
                return Err(Error::Dimension(format!(
                    "conv2d: bias {:?} does not match {c_out} output channels",
                    bv.shape()
                )));
            }
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            ksize: kh,
            stride,
        };
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let cols = im2col(xv.data(), &geom);
        let mut out = vec![T::zero(); c_out * oh * ow];
        gemm_nn(kv.data(), &cols, &mut out, c_out, geom.patch_len(), oh * ow);
        if let Some(b) = bias {
            let bv = self.nodes[b.idx].value.data();
            for (co, &bb) in bv.iter().enumerate() {
                for o in &mut out[co * oh * ow..(co + 1) * oh * ow] {
                    *o += bb;
                }
            }
        }
        let rg = self.rg(x) || self.rg(k) || bias.is_some_and(|b| self.rg(b));
        // The patch matrix is only needed for the kernel gradient.
        let cols = if self.rg(k) { cols } else { Vec::new() };
        Ok(self.push(
            Tensor::new(&[c_out, oh, ow], out)?,
            Op::Conv2d {
                x,
                k,
                bias,
                geom,
                c_out,
                cols,
            },
            rg,
        ))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        check_same(av.shape(), bv.shape(), name)?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a length-`M` bias to every row of an `N×M` matrix.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (&self.node(x)?.value, &self.node(b)?.value);
        if xv.ndim() != 2 || bv.len() != xv.shape()[1] {
            return Err(Error::Dimension(format!(
                "add_row_bias: bias {:?} does not fit rows of {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let m = xv.shape()[1];
        let mut t = xv.clone();
        for row in t.data_mut().chunks_mut(m) {
            for (v, &bb) in row.iter_mut().zip(bv.data()) {
                *v += bb;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(t, Op::AddRowBias(x, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let t = self.node(x)?.value.map(|v| v * c);
        let rg = self.rg(x);
        Ok(self.push(t, Op::Scale(x, c), rg))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        let xv = &self.node(x)?.value;
        check_same(xv.shape(), c.shape(), "mul_const")?;
        let data = xv
            .data()
            .iter()
            .zip(c.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let t = Tensor::new(xv.shape(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::MulConst(x, c.data().to_vec()), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        // Non-positive inputs map to +0 so the output never carries a negative zero.
        let t = self
            .node(x)?
            .value
            .map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        Ok(self.push(t, Op::Relu(x), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.node(x)?.value.map(sigmoid);
        let rg = self.rg(x);
        Ok(self.push(t, Op::Sigmoid(x), rg))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let t = self.node(x)?.value.map(|v| v.tanh());
        let rg = self.rg(x);
        Ok(self.push(t, Op::Tanh(x), rg))
    }

    /// Nearest-neighbour 2× upsampling of `C×H×W`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if xv.ndim() != 3 {
            return Err(Error::Dimension(format!(
                "upsample2x: expected C×H×W, got {:?}",
                xv.shape()
            )));
        }
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out.set3(ch, y, xx, xv.at3(ch, y / 2, xx / 2));
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Upsample2x(x), rg))
    }

    /// `C×size×size` window of `x: C×H×W` with top-left corner `(top, left)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, size: usize) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if xv.ndim() != 3 || top + size > xv.shape()[1] || left + size > xv.shape()[2] || size == 0
        {
            return Err(Error::Dimension(format!(
                "crop: window {size}×{size} at ({top}, {left}) outside {:?}",
                xv.shape()
            )));
        }
        let c = xv.shape()[0];
        let mut out = Tensor::zeros(&[c, size, size]);
        for ch in 0..c {
            for y in 0..size {
                for xx in 0..size {
                    out.set3(ch, y, xx, xv.at3(ch, top + y, left + xx));
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Crop { x, top, left, size }, rg))
    }

    /// Picks flat elements by index into a 1-D result.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if idx.is_empty() || idx.iter().any(|&i| i >= xv.len()) {
            return Err(Error::Dimension(format!(
                "gather: indices {idx:?} invalid for {:?}",
                xv.shape()
            )));
        }
        let data = idx.iter().map(|&i| xv.data()[i]).collect();
        let t = Tensor::new(&[idx.len()], data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Gather(x, idx.to_vec()), rg))
    }

    /// Flattens each input and stacks them as rows of an `N×L` matrix.
    pub fn stack_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Dimension("stack_rows: no inputs".into()));
        };
        let l = self.node(first)?.value.len();
        let mut data = Vec::with_capacity(l * xs.len());
        for &v in xs {
            let t = &self.node(v)?.value;
            if t.len() != l {
                return Err(Error::Dimension(format!(
                    "stack_rows: row of {} elements, expected {l}",
                    t.len()
                )));
            }
            data.extend_from_slice(t.data());
        }
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(&[xs.len(), l], data)?,
            Op::StackRows(xs.to_vec()),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.node(x)?.value.clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.node(x)?.value.sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let s = xv.sum() / T::lit(xv.len() as f64);
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    /// Mean Huber loss with transition at |d| = 1.
    pub fn smooth_l1(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let pv = &self.node(pred)?.value;
        check_same(pv.shape(), target.shape(), "smooth_l1")?;
        let half = T::lit(0.5);
        let s: T = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let d = (p - t).abs();
                if d < T::one() {
                    half * d * d
                } else {
                    d - half
                }
            })
            .sum();
        let loss = s / T::lit(pv.len() as f64);
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(loss), Op::SmoothL1(pred, target.clone()), rg))
    }

    /// Mean binary cross-entropy; predictions are clamped to `[ε, 1 − ε]`.
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let pv = &self.node(pred)?.value;
        check_same(pv.shape(), target.shape(), "bce")?;
        let (lo, hi) = (T::lit(BCE_EPS), T::one() - T::lit(BCE_EPS));
        let s: T = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let p = p.max(lo).min(hi);
                -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
            })
            .sum();
        let loss = s / T::lit(pv.len() as f64);
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Bce(pred, target.clone()), rg))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let pv = &self.node(pred)?.value;
        check_same(pv.shape(), target.shape(), "mse")?;
        let s: T = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let loss = s / T::lit(pv.len() as f64);
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, target.clone()), rg))
    }

    /// Reverse sweep from a scalar `loss`; each recorded node is visited once.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ln = self.node(loss)?;
        if ln.value.len() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                ln.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if ln.requires_grad {
            grads[loss.idx] = Some(Tensor::scalar(T::one()));
        }
        for i in (0..=loss.idx).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            params: self
                .nodes
                .iter()
                .enumerate()
                .filter_map(|(i, n)| match n.op {
                    Op::Param(id) if n.requires_grad => Some((id, i)),
                    _ => None,
                })
                .collect(),
            grads,
        })
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        store.accumulate(&grads)
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.idx].value;
        let mut acc = |v: Var, data: Vec<T>| {
            if !self.nodes[v.idx].requires_grad {
                return;
            }
            match &mut grads[v.idx] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(data) {
                        *e += d;
                    }
                }
                slot @ None => {
                    let shape = self.nodes[v.idx].value.shape();
                    *slot = Some(Tensor::new(shape, data).expect("gradient shape"));
                }
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_nt(gd, bv.data(), &mut da, m, n, k);
                    acc(*a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_tn(av.data(), gd, &mut db, k, m, n);
                    acc(*b, db);
                }
            }
            Op::Conv2d {
                x,
                k,
                bias,
                geom,
                c_out,
                cols,
            } => {
                let ohw = geom.out_h() * geom.out_w();
                let plen = geom.patch_len();
                if self.rg(*k) {
                    let mut dk = vec![T::zero(); c_out * plen];
                    gemm_nt(gd, cols, &mut dk, *c_out, ohw, plen);
                    acc(*k, dk);
                }
                if let Some(b) = bias {
                    if self.rg(*b) {
                        let db = gd
                            .chunks(ohw)
                            .map(|row| row.iter().copied().sum())
                            .collect();
                        acc(*b, db);
                    }
                }
                if self.rg(*x) {
                    let mut dcols = vec![T::zero(); plen * ohw];
                    gemm_tn(val(*k).data(), gd, &mut dcols, plen, *c_out, ohw);
                    acc(*x, col2im(&dcols, geom));
                }
            }
            Op::Add(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if self.rg(*a) {
                    acc(*a, gd.iter().zip(bv).map(|(&g, &y)| g * y).collect());
                }
                if self.rg(*b) {
                    acc(*b, gd.iter().zip(av).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::AddRowBias(x, b) => {
                acc(*x, gd.to_vec());
                if self.rg(*b) {
                    let m = val(*b).len();
                    let mut db = vec![T::zero(); m];
                    for row in gd.chunks(m) {
                        for (d, &r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Scale(x, c) => acc(*x, gd.iter().map(|&v| v * *c).collect()),
            Op::MulConst(x, c) => acc(*x, gd.iter().zip(c).map(|(&g, &m)| g * m).collect()),
            Op::Relu(x) => {
                let xv = val(*x).data();
                acc(
                    *x,
                    gd.iter()
                        .zip(xv)
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect(),
                )
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(
                    *x,
                    gd.iter()
                        .zip(y)
                        .map(|(&g, &s)| g * s * (T::one() - s))
                        .collect(),
                )
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(
                    *x,
                    gd.iter()
                        .zip(y)
                        .map(|(&g, &t)| g * (T::one() - t * t))
                        .collect(),
                )
            }
            Op::Upsample2x(x) => {
                let xs = val(*x).shape();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            dx[(ch * h + y / 2) * w + xx / 2] += gd[(ch * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Crop { x, top, left, size } => {
                let xs = val(*x).shape();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..*size {
                        for xx in 0..*size {
                            dx[(ch * h + top + y) * w + left + xx] +=
                                gd[(ch * size + y) * size + xx];
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Gather(x, idx) => {
                let mut dx = vec![T::zero(); val(*x).len()];
                for (&i, &g) in idx.iter().zip(gd) {
                    dx[i] += g;
                }
                acc(*x, dx);
            }
            Op::StackRows(xs) => {
                let l = val(xs[0]).len();
                for (row, &v) in gd.chunks(l).zip(xs) {
                    acc(v, row.to_vec());
                }
            }
            Op::Reshape(x) => acc(*x, gd.to_vec()),
            Op::Sum(x) => acc(*x, vec![gd[0]; val(*x).len()]),
            Op::Mean(x) => {
                let n = val(*x).len();
                acc(*x, vec![gd[0] / T::lit(n as f64); n]);
            }
            Op::SmoothL1(p, t) => {
                let pv = val(*p).data();
                let scale = gd[0] / T::lit(pv.len() as f64);
                acc(
                    *p,
                    pv.iter()
                        .zip(t.data())
                        .map(|(&p, &t)| {
                            let d = p - t;
                            let slope = if d.abs() < T::one() { d } else { d.signum() };
                            slope * scale
                        })
                        .collect(),
                )
            }
            Op::Bce(p, t) => {
                let pv = val(*p).data();
                let scale = gd[0] / T::lit(pv.len() as f64);
                let (lo, hi) = (T::lit(BCE_EPS), T::one() - T::lit(BCE_EPS));
                acc(
                    *p,
                    pv.iter()
                        .zip(t.data())
                        .map(|(&p, &t)| {
                            if p < lo || p > hi {
                                T::zero()
                            } else {
                                (-(t / p) + (T::one() - t) / (T::one() - p)) * scale
                            }
                        })
                        .collect(),
                )
            }
            Op::Mse(p, t) => {
                let pv = val(*p).data();
                let scale = T::lit(2.0) * gd[0] / T::lit(pv.len() as f64);
                acc(
                    *p,
                    pv.iter()
                        .zip(t.data())
                        .map(|(&p, &t)| (p - t) * scale)
                        .collect(),
                )
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Result of one reverse sweep.
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if `v` requires one and was reached.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads[v.idx].as_ref()
    }

    /// Gradients of every trainable parameter used on the tape, one entry per use.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|&(id, i)| self.grads[i].as_ref().map(|g| (id, g)))
    }
}
