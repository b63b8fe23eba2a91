//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the tape; node ids are therefore already
//! in topological order and [`Graph::backward`] is a single reverse sweep.
//! A graph is built for one forward/backward pass and then dropped or
//! [cleared](Graph::clear).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, usage_err, Error, Result};
use crate::scalar::{Real, Scalar};
use crate::tensor::Tensor;

/// Instance normalization epsilon.
pub const NORM_EPS: f64 = 1e-5;

/// Negative slope of [`Graph::leaky_relu`].
pub const LEAKY_SLOPE: f64 = 0.2;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, stride: usize, pad: usize },
    Upsample2x(Var),
    InstanceNorm { input: Var, inv_std: Vec<T> },
    Relu(Var),
    LeakyRelu(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Shift(Var),
    Mean(Var),
    Abs(Var),
    Square(Var),
    Concat(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation with values and, after [`backward`](Graph::backward), gradients.
#[derive(Debug, Clone)]
pub struct Graph<T: Scalar = Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn conv_extent(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (size + 2 * pad >= k).then(|| (size + 2 * pad - k) / stride + 1)
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Output positions `[lo, hi)` whose source index `o*stride + kk - pad` lies in `[0, size)`.
    fn valid(&self, kk: usize, size: usize, out: usize) -> (usize, usize) {
        let lo = if self.pad > kk { (self.pad - kk).div_ceil(self.stride) } else { 0 };
        let hi = if size + self.pad > kk { ((size + self.pad - kk - 1) / self.stride + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let hw = self.cols();
        let (s, p) = (self.stride, self.pad);
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..][..self.h * self.w];
            for ky in 0..self.k {
                let (ylo, yhi) = self.valid(ky, self.h, self.ho);
                for kx in 0..self.k {
                    let (xlo, xhi) = self.valid(kx, self.w, self.wo);
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * hw..][..hw];
                    dst[..ylo * self.wo].fill(T::zero());
                    dst[yhi * self.wo..].fill(T::zero());
                    for oy in ylo..yhi {
                        let line = &mut dst[oy * self.wo..][..self.wo];
                        line[..xlo].fill(T::zero());
                        line[xhi..].fill(T::zero());
                        let src_row = &plane[(oy * s + ky - p) * self.w..][..self.w];
                        let first = xlo * s + kx - p;
                        if s == 1 {
                            line[xlo..xhi].copy_from_slice(&src_row[first..first + (xhi - xlo)]);
                        } else {
                            for (d, &v) in line[xlo..xhi].iter_mut().zip(src_row[first..].iter().step_by(s)) {
                                *d = v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let hw = self.cols();
        let (s, p) = (self.stride, self.pad);
        for ci in 0..self.c {
            let plane = &mut dx[ci * self.h * self.w..][..self.h * self.w];
            for ky in 0..self.k {
                let (ylo, yhi) = self.valid(ky, self.h, self.ho);
                for kx in 0..self.k {
                    let (xlo, xhi) = self.valid(kx, self.w, self.wo);
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * hw..][..hw];
                    for oy in ylo..yhi {
                        let line = &src[oy * self.wo + xlo..oy * self.wo + xhi];
                        let dst_row = &mut plane[(oy * s + ky - p) * self.w..][..self.w];
                        let first = xlo * s + kx - p;
                        if s == 1 {
                            for (d, &v) in dst_row[first..first + line.len()].iter_mut().zip(line) {
                                *d = *d + v;
                            }
                        } else {
                            for (d, &v) in dst_row[first..].iter_mut().step_by(s).zip(line) {
                                *d = *d + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn slot<'a, T: Scalar>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> &'a mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()])
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node and gradient.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is populated by [`backward`](Self::backward).
    pub fn parameter(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copies a value into a fresh constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.node(v).value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) call for a parameter leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn unary(&mut self, name: &'static str, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let value = self.node(x).value.map(f);
        check_finite(name, &value)?;
        let rg = self.node(x).requires_grad;
        Ok(self.push(value, op, rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (va, vb) = (&self.node(a).value, &self.node(b).value);
        if va.shape() != vb.shape() {
            return Err(config_err!("{name}: shape {:?} vs {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape(), data)?;
        check_finite(name, &value)?;
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(value, op, rg))
    }

    /// 2-D convolution with square kernel `weight: [cout, cin, k, k]`, `bias: [cout]`
    /// and symmetric zero padding.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (cout, cin, k, k2) = self.value(weight).dims4()?;
        if cin != c || k != k2 || stride == 0 {
            return Err(config_err!(
                "conv2d: input channels {c}, weight {:?}, stride {stride}",
                self.value(weight).shape()
            ));
        }
        if self.value(bias).shape() != [cout] {
            return Err(config_err!("conv2d: bias shape {:?}, want [{cout}]", self.value(bias).shape()));
        }
        let (Some(ho), Some(wo)) = (conv_extent(h, k, stride, pad), conv_extent(w, k, stride, pad)) else {
            return Err(config_err!("conv2d: kernel {k} larger than padded input {h}x{w}"));
        };
        let geom = ConvGeom { c, h, w, k, stride, pad, ho, wo };
        let (rows, hw) = (geom.rows(), geom.cols());
        let mut out = vec![T::zero(); n * cout * hw];
        let mut cols = vec![T::zero(); rows * hw];
        let xd = self.value(x).data();
        let wd = self.value(weight).data();
        let bd = self.value(bias).data();
        for s in 0..n {
            geom.im2col(&xd[s * c * h * w..][..c * h * w], &mut cols);
            let dst = &mut out[s * cout * hw..][..cout * hw];
            for (oc, line) in dst.chunks_exact_mut(hw).enumerate() {
                line.fill(bd[oc]);
            }
            T::gemm(cout, rows, hw, wd, false, &cols, false, dst, T::one());
        }
        let value = Tensor::new(&[n, cout, ho, wo], out)?;
        check_finite("conv2d", &value)?;
        let rg = [x, weight, bias].iter().any(|&v| self.node(v).requires_grad);
        Ok(self.push(value, Op::Conv2d { input: x, weight, bias, stride, pad }, rg))
    }

    /// Nearest-neighbour 2× spatial upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * 4 * h * w];
        for (p, plane) in src.chunks_exact(h * w).enumerate() {
            let dst = &mut out[p * 4 * h * w..][..4 * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new(&[n, c, 2 * h, 2 * w], out)?;
        let rg = self.node(x).requires_grad;
        Ok(self.push(value, Op::Upsample2x(x), rg))
    }

    /// Per-sample, per-channel normalization to zero mean and unit variance.
    pub fn instance_norm(&mut self, x: Var) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        let inv_n = T::one() / T::from_usize(plane).unwrap();
        let eps = T::lit(NORM_EPS);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(src.len() / plane);
        for (xs, ys) in src.chunks_exact(plane).zip(out.chunks_exact_mut(plane)) {
            let mean = xs.iter().fold(T::zero(), |a, &v| a + v) * inv_n;
            let var = xs.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_n;
            let r = T::one() / (var + eps).sqrt();
            for (y, &v) in ys.iter_mut().zip(xs) {
                *y = (v - mean) * r;
            }
            inv_std.push(r);
        }
        let value = Tensor::new(self.value(x).shape(), out)?;
        check_finite("instance_norm", &value)?;
        let rg = self.node(x).requires_grad;
        Ok(self.push(value, Op::InstanceNorm { input: x, inv_std }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, Op::Relu(x), |v| v.max(T::zero()))
    }

    pub fn leaky_relu(&mut self, x: Var) -> Result<Var> {
        let slope = T::lit(LEAKY_SLOPE);
        self.unary("leaky_relu", x, Op::LeakyRelu(x), move |v| if v > T::zero() { v } else { v * slope })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary("abs", x, Op::Abs(x), |v| v.abs())
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, Op::Square(x), |v| v * v)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        self.unary("scale", x, Op::Scale(x, factor), move |v| v * factor)
    }

    /// Addition of a constant.
    pub fn shift(&mut self, x: Var, offset: T) -> Result<Var> {
        self.unary("shift", x, Op::Shift(x), move |v| v + offset)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Mean over all elements, as a rank-0 tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = T::from_usize(v.numel()).unwrap();
        let m = v.data().iter().fold(T::zero(), |a, &b| a + b) / n;
        let value = Tensor::scalar(m);
        check_finite("mean", &value)?;
        let rg = self.node(x).requires_grad;
        Ok(self.push(value, Op::Mean(x), rg))
    }

    /// Concatenation of NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(usage_err!("concat_channels of zero tensors"));
        };
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut total_c = 0;
        for &x in xs {
            let (n2, c, h2, w2) = self.value(x).dims4()?;
            if (n2, h2, w2) != (n, h, w) {
                return Err(config_err!(
                    "concat_channels: {:?} vs {:?}",
                    self.value(first).shape(),
                    self.value(x).shape()
                ));
            }
            total_c += c;
        }
        let mut out = Vec::with_capacity(n * total_c * h * w);
        for s in 0..n {
            for &x in xs {
                let (_, c, _, _) = self.value(x).dims4()?;
                out.extend_from_slice(&self.value(x).data()[s * c * h * w..][..c * h * w]);
            }
        }
        let value = Tensor::new(&[n, total_c, h, w], out)?;
        let rg = xs.iter().any(|&x| self.node(x).requires_grad);
        Ok(self.push(value, Op::Concat(xs.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Afterwards every parameter leaf holds `d loss / d param` (zeros when
    /// unreachable). Gradients from an earlier call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.numel() != 1 {
            return Err(usage_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.node(loss).requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[id].get_or_insert_with(|| vec![T::zero(); node.value.numel()]);
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
            } else {
                grads[id] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        macro_rules! acc {
            ($v:expr) => {
                slot(grads, nodes, $v)
            };
        }
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, stride, pad } => {
                let xv = &nodes[input.0].value;
                let wv = &nodes[weight.0].value;
                let (n, c, h, w) = xv.dims4()?;
                let (cout, _, k, _) = wv.dims4()?;
                let (_, _, ho, wo) = node.value.dims4()?;
                let geom = ConvGeom { c, h, w, k, stride: *stride, pad: *pad, ho, wo };
                let (rows, hw) = (geom.rows(), geom.cols());
                if wants(*bias) {
                    let db = acc!(*bias);
                    for s in 0..n {
                        for (oc, line) in g[s * cout * hw..][..cout * hw].chunks_exact(hw).enumerate() {
                            db[oc] = line.iter().fold(db[oc], |a, &v| a + v);
                        }
                    }
                }
                let mut cols = vec![T::zero(); rows * hw];
                if wants(*weight) {
                    let dw = acc!(*weight);
                    for s in 0..n {
                        geom.im2col(&xv.data()[s * c * h * w..][..c * h * w], &mut cols);
                        T::gemm(cout, hw, rows, &g[s * cout * hw..][..cout * hw], false, &cols, true, dw, T::one());
                    }
                }
                if wants(*input) {
                    let dx = acc!(*input);
                    for s in 0..n {
                        T::gemm(rows, cout, hw, wv.data(), true, &g[s * cout * hw..][..cout * hw], false, &mut cols, T::zero());
                        geom.col2im(&cols, &mut dx[s * c * h * w..][..c * h * w]);
                    }
                }
            }
            Op::Upsample2x(x) => {
                let (_, _, h, w) = nodes[x.0].value.dims4()?;
                let dx = acc!(*x);
                for (p, plane) in g.chunks_exact(4 * h * w).enumerate() {
                    let dst = &mut dx[p * h * w..][..h * w];
                    for yy in 0..2 * h {
                        for xx in 0..2 * w {
                            let i = (yy / 2) * w + xx / 2;
                            dst[i] = dst[i] + plane[yy * 2 * w + xx];
                        }
                    }
                }
            }
            Op::InstanceNorm { input, inv_std } => {
                let (_, _, h, w) = nodes[input.0].value.dims4()?;
                let plane = h * w;
                let inv_n = T::one() / T::from_usize(plane).unwrap();
                let dx = acc!(*input);
                for (p, &r) in inv_std.iter().enumerate() {
                    let gs = &g[p * plane..][..plane];
                    let ys = &y[p * plane..][..plane];
                    let mean_g = gs.iter().fold(T::zero(), |a, &v| a + v) * inv_n;
                    let mean_gy = gs.iter().zip(ys).fold(T::zero(), |a, (&gv, &yv)| a + gv * yv) * inv_n;
                    for ((d, &gv), &yv) in dx[p * plane..][..plane].iter_mut().zip(gs).zip(ys) {
                        *d = *d + r * (gv - mean_g - yv * mean_gy);
                    }
                }
            }
            Op::Relu(x) => {
                let dx = acc!(*x);
                for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                    if yv > T::zero() {
                        *d = *d + gv;
                    }
                }
            }
            Op::LeakyRelu(x) => {
                let slope = T::lit(LEAKY_SLOPE);
                let xs = nodes[x.0].value.data();
                let dx = acc!(*x);
                for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(xs) {
                    *d = *d + if xv > T::zero() { gv } else { gv * slope };
                }
            }
            Op::Tanh(x) => {
                let dx = acc!(*x);
                for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                    *d = *d + gv * (T::one() - yv * yv);
                }
            }
            Op::Abs(x) => {
                let xs = nodes[x.0].value.data();
                let dx = acc!(*x);
                for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(xs) {
                    if xv > T::zero() {
                        *d = *d + gv;
                    } else if xv < T::zero() {
                        *d = *d - gv;
                    }
                }
            }
            Op::Square(x) => {
                let xs = nodes[x.0].value.data();
                let dx = acc!(*x);
                for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(xs) {
                    *d = *d + gv * (xv + xv);
                }
            }
            Op::Scale(x, f) => {
                let dx = acc!(*x);
                for (d, &gv) in dx.iter_mut().zip(g) {
                    *d = *d + gv * *f;
                }
            }
            Op::Shift(x) => {
                let dx = acc!(*x);
                for (d, &gv) in dx.iter_mut().zip(g) {
                    *d = *d + gv;
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let negate = matches!(node.op, Op::Sub(..));
                if wants(*a) {
                    for (d, &gv) in acc!(*a).iter_mut().zip(g) {
                        *d = *d + gv;
                    }
                }
                if wants(*b) {
                    for (d, &gv) in acc!(*b).iter_mut().zip(g) {
                        *d = if negate { *d - gv } else { *d + gv };
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bs = nodes[b.0].value.data();
                    for ((d, &gv), &bv) in acc!(*a).iter_mut().zip(g).zip(bs) {
                        *d = *d + gv * bv;
                    }
                }
                if wants(*b) {
                    let as_ = nodes[a.0].value.data();
                    for ((d, &gv), &av) in acc!(*b).iter_mut().zip(g).zip(as_) {
                        *d = *d + gv * av;
                    }
                }
            }
            Op::Mean(x) => {
                let n = T::from_usize(nodes[x.0].value.numel()).unwrap();
                let share = g[0] / n;
                for d in acc!(*x).iter_mut() {
                    *d = *d + share;
                }
            }
            Op::Concat(xs) => {
                let (n, total_c, h, w) = node.value.dims4()?;
                let plane = h * w;
                let mut offset = 0;
                for &x in xs {
                    let (_, c, _, _) = nodes[x.0].value.dims4()?;
                    if wants(x) {
                        let dx = acc!(x);
                        for s in 0..n {
                            let src = &g[(s * total_c + offset) * plane..][..c * plane];
                            for (d, &gv) in dx[s * c * plane..][..c * plane].iter_mut().zip(src) {
                                *d = *d + gv;
                            }
                        }
                    }
                    offset += c;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_of_zero_input_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 4, 4]));
        let w = g.constant(Tensor::from_fn(&[2, 1, 3, 3], |i| i as f64 - 4.0));
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 4, 4]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_center_of_ones_kernel_sums_neighbourhood() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[1, 1, 3, 3], |i| (i + 1) as f64));
        let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.value(y).data()[4], 45.0);
        // corner sees 1,2,4,5
        assert_eq!(g.value(y).data()[0], 12.0);
    }

    #[test]
    fn strided_conv_shape_arithmetic() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[2, 3, 32, 32]));
        let w = g.constant(Tensor::zeros(&[8, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(&[8]));
        let y = g.conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 8, 16, 16]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(g.conv2d(x, w, b, 1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn instance_norm_of_constant_plane_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 2, 3, 3], 7.0));
        let y = g.instance_norm(x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn instance_norm_moments() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4, 5], |i| ((i * 37 % 11) as f64).sin() * 3.0 + 1.0));
        let y = g.instance_norm(x).unwrap();
        for plane in g.value(y).data().chunks(20) {
            let m = plane.iter().sum::<f64>() / 20.0;
            let v = plane.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 20.0;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(t(&[4], &[1.0, -2.0, 3.0, 0.5]));
        let m = g.mean(x).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn mean_square_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(t(&[2], &[1.0, 2.0]));
        let sq = g.square(x).unwrap();
        let m = g.mean(sq).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(t(&[2], &[1.0, 2.0]));
        let y = g.square(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn unreachable_parameters_get_zero_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(t(&[2], &[1.0, 2.0]));
        let unused = g.parameter(t(&[3], &[1.0, 2.0, 3.0]));
        let m = g.mean(x).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(unused).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(t(&[2], &[1.0, 2.0]));
        let y = g.square(x).unwrap();
        let d = g.detach(y);
        let z = g.mul(d, x).unwrap();
        let m = g.mean(z).unwrap();
        g.backward(m).unwrap();
        // only the direct path through `x`: d/dx (c * x)/2 = c/2
        assert_eq!(g.grad(x).unwrap(), &[0.5, 2.0]);
    }

    #[test]
    fn non_finite_forward_is_reported() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1], &[1e200]));
        assert_eq!(g.square(x), Err(Error::NonFinite { op: "square" }));
    }

    #[test]
    fn concat_stacks_channels_per_sample() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_fn(&[2, 1, 1, 2], |i| i as f64));
        let b = g.constant(Tensor::from_fn(&[2, 2, 1, 2], |i| 10.0 + i as f64));
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 3, 1, 2]);
        assert_eq!(
            g.value(c).data(),
            &[0.0, 1.0, 10.0, 11.0, 12.0, 13.0, 2.0, 3.0, 14.0, 15.0, 16.0, 17.0]
        );
    }

    #[test]
    fn upsample_repeats_pixels() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 1, 2], &[1.0, 2.0]));
        let y = g.upsample2x(x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut g = Graph::<f32>::new();
            let x = g.constant(Tensor::from_fn(&[2, 3, 8, 8], |i| ((i * 7919) % 13) as f32 / 13.0));
            let w = g.constant(Tensor::from_fn(&[4, 3, 3, 3], |i| ((i * 31) % 7) as f32 / 7.0 - 0.5));
            let b = g.constant(Tensor::zeros(&[4]));
            let y = g.conv2d(x, w, b, 2, 1).unwrap();
            let y = g.instance_norm(y).unwrap();
            g.value(y).clone()
        };
        assert!(run().bit_eq(&run()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn instance_norm_standardizes_each_plane(
                data in proptest::collection::vec(-50.0f64..50.0, 2 * 3 * 16),
            ) {
                let mut g = Graph::new();
                let x = g.constant(Tensor::new(&[2, 3, 4, 4], data.clone()).unwrap());
                let y = g.instance_norm(x).unwrap();
                for (plane, src) in g.value(y).data().chunks(16).zip(data.chunks(16)) {
                    let mean = src.iter().sum::<f64>() / 16.0;
                    let var = src.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
                    let m = plane.iter().sum::<f64>() / 16.0;
                    let v = plane.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 16.0;
                    prop_assert!(m.abs() < 1e-9);
                    // eps in the denominator pulls the variance slightly below 1
                    prop_assert!((v - var / (var + NORM_EPS)).abs() < 1e-9);
                }
            }

            #[test]
            fn conv_is_linear_in_its_input(
                a in proptest::collection::vec(-1.0f64..1.0, 2 * 5 * 5),
                b in proptest::collection::vec(-1.0f64..1.0, 2 * 5 * 5),
                w in proptest::collection::vec(-1.0f64..1.0, 3 * 2 * 3 * 3),
                stride in 1usize..3,
            ) {
                let run = |x: Vec<f64>| {
                    let mut g = Graph::new();
                    let x = g.constant(Tensor::new(&[1, 2, 5, 5], x).unwrap());
                    let wv = g.constant(Tensor::new(&[3, 2, 3, 3], w.clone()).unwrap());
                    let bv = g.constant(Tensor::zeros(&[3]));
                    let y = g.conv2d(x, wv, bv, stride, 1).unwrap();
                    g.value(y).data().to_vec()
                };
                let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
                let (ya, yb, ys) = (run(a.clone()), run(b.clone()), run(sum));
                for ((p, q), r) in ya.iter().zip(&yb).zip(&ys) {
                    prop_assert!((p + q - r).abs() < 1e-12);
                }
            }
        }
    }
}
