//! Reverse-mode automatic differentiation over whole tensors.
//!
//! Every op appends a node holding its forward value. `backward` walks the
//! node list in reverse, so gradients accumulate in a fixed order and two
//! identical graphs always produce bit-identical gradients.

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Upsample2x(Var),
    SoftmaxRows(Var),
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScalarMul {
        s: Var,
        x: Var,
    },
    ChannelScale {
        x: Var,
        s: Var,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    ChannelMean(Var),
    ChannelVar(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of forward operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient buffers produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`; `None` for nodes that do not require grad.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of non-leaf nodes.
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| !matches!(n.op, Op::Leaf)).count()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds a leaf; it is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        value.requires_grad = requires_grad;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => return Err(Error::dim("matmul", sa, sb)),
        };
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.record(vec![m, n], data, Op::MatMul(a, b), &[a, b])
    }

    /// Cross-correlation of `x: [Cin,H,W]` with `w: [Cout,Cin,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        let (cin, h, wd, cout, kh, kw) = match (sx, sw) {
            (&[cin, h, wd], &[cout, cin2, kh, kw]) if cin == cin2 => (cin, h, wd, cout, kh, kw),
            _ => return Err(Error::dim("conv2d", sx, sw)),
        };
        if stride == 0 {
            return Err(Error::config("conv2d stride must be >= 1"));
        }
        let ho = ConvGeom::out_extent(h, kh, stride, padding);
        let wo = ConvGeom::out_extent(wd, kw, stride, padding);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(Error::dim("conv2d output size", sx, sw));
        };
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::dim("conv2d bias", self.shape(b), &[cout]));
            }
        }
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            pad: padding,
            ho,
            wo,
        };
        let data = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
        );
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.record(vec![cout, ho, wo], data, Op::Conv2d { x, w, bias, geom }, &inputs)
    }

    /// Nearest-neighbour x2 upsampling of a `[C,H,W]` map.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [c, h, w] = self.value(x).dims3("upsample2x")?;
        let data = kernels::upsample2x(self.value(x).data(), c, h, w);
        self.record(vec![c, 2 * h, 2 * w], data, Op::Upsample2x(x), &[x])
    }

    /// Row-wise softmax of a `[r,c]` matrix, max-subtracted.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let &[r, c] = s else {
            return Err(Error::dim("softmax_rows", s, &[0, 0]));
        };
        let xd = self.value(x).data();
        if xd.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax_rows input contains NaN".into()));
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (d, v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                sum += *d;
            }
            dst.iter_mut().for_each(|d| *d /= sum);
        }
        self.record(vec![r, c], out, Op::SoftmaxRows(x), &[x])
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| f(a)).collect();
        let shape = v.shape().to_vec();
        self.record(shape, data, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |a| if a > 0.0 { a } else { 0.0 }, Op::Relu(x))
    }

    /// Active/inactive flag of every ReLU input recorded so far, in order.
    /// Two evaluations with equal signatures lie on the same linear piece.
    pub fn relu_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                sig.extend(self.nodes[x.0].value.data().iter().map(|&a| a > 0.0));
            }
        }
        sig
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Result<Var> {
        self.unary(x, |v| a * v, Op::Scale(x, a))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape().to_vec();
        self.record(shape, data, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `s * x` for a single-element `s`.
    pub fn scalar_mul(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::dim("scalar_mul", self.shape(s), &[1]));
        }
        let sv = self.value(s).data()[0];
        let v = self.value(x);
        let data = v.data().iter().map(|a| sv * a).collect();
        let shape = v.shape().to_vec();
        self.record(shape, data, Op::ScalarMul { s, x }, &[s, x])
    }

    /// Multiplies channel `c` of `x: [C,H,W]` by `s[c]`.
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let [c, h, w] = self.value(x).dims3("channel_scale")?;
        if self.shape(s) != [c] {
            return Err(Error::dim("channel_scale", self.shape(x), self.shape(s)));
        }
        let plane = h * w;
        let sd = self.value(s).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| sd[i / plane] * v)
            .collect();
        self.record(vec![c, h, w], data, Op::ChannelScale { x, s }, &[x, s])
    }

    /// Concatenation along the leading axis; trailing dims must agree.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Contract("concat of zero tensors".into()));
        };
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s[1..] != tail[..] {
                return Err(Error::dim("concat_channels", self.shape(first), s));
            }
            lead += s[0];
            data.extend_from_slice(self.value(x).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.record(shape, data, Op::Concat(xs.to_vec()), xs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.numel() {
            return Err(Error::dim("reshape", v.shape(), shape));
        }
        let data = v.data().to_vec();
        self.record(shape.to_vec(), data, Op::Reshape(x), &[x])
    }

    pub fn transpose2d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let &[r, c] = s else {
            return Err(Error::dim("transpose2d", s, &[0, 0]));
        };
        let data = kernels::transpose(self.value(x).data(), r, c);
        self.record(vec![c, r], data, Op::Transpose(x), &[x])
    }

    /// Sum of all entries as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.record(vec![1], vec![total], Op::Sum(x), &[x])
    }

    /// Spatial mean of each channel of `[C,H,W]`, giving `[C]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let [c, h, w] = self.value(x).dims3("channel_mean")?;
        let n = (h * w) as f64;
        let data = self
            .value(x)
            .data()
            .chunks_exact(h * w)
            .map(|p| p.iter().sum::<f64>() / n)
            .collect();
        self.record(vec![c], data, Op::ChannelMean(x), &[x])
    }

    /// Population variance (divisor `H*W`) of each channel, giving `[C]`.
    pub fn channel_var(&mut self, x: Var) -> Result<Var> {
        let [c, h, w] = self.value(x).dims3("channel_var")?;
        let n = (h * w) as f64;
        let data = self
            .value(x)
            .data()
            .chunks_exact(h * w)
            .map(|p| {
                let mean = p.iter().sum::<f64>() / n;
                p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
            })
            .collect();
        self.record(vec![c], data, Op::ChannelVar(x), &[x])
    }

    /// Propagates gradients from the scalar `loss` to every differentiable node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                node.requires_grad.then(|| {
                    let data = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                    Tensor::new(node.value.shape().to_vec(), data).expect("grad shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: impl FnOnce() -> Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let g = g();
        match &mut grads[v.0] {
            Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, x)| *b += x),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (&[m, k], &[_, n]) = (self.shape(a), self.shape(b)) else {
                    unreachable!()
                };
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                self.accumulate(grads, a, || kernels::matmul_nt(dy, bv, m, n, k));
                self.accumulate(grads, b, || kernels::matmul_tn(av, dy, m, k, n));
            }
            Op::Conv2d { x, w, bias, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(geom, self.value(*x).data(), self.value(*w).data(), dy);
                self.accumulate(grads, *x, || dx);
                self.accumulate(grads, *w, || dw);
                if let Some(b) = bias {
                    self.accumulate(grads, *b, || db);
                }
            }
            &Op::Upsample2x(x) => {
                let [c, h, w] = self.value(x).dims3("upsample2x").expect("rank 3");
                self.accumulate(grads, x, || kernels::upsample2x_backward(dy, c, h, w));
            }
            &Op::SoftmaxRows(x) => {
                let c = node.value.shape()[1];
                self.accumulate(grads, x, || {
                    let mut dx = vec![0.0; dy.len()];
                    for ((dxr, yr), gr) in dx.chunks_exact_mut(c).zip(out.chunks_exact(c)).zip(dy.chunks_exact(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for ((d, y), g) in dxr.iter_mut().zip(yr).zip(gr) {
                            *d = y * (g - dot);
                        }
                    }
                    dx
                });
            }
            &Op::Relu(x) => {
                let xv = self.value(x).data();
                self.accumulate(grads, x, || {
                    xv.iter()
                        .zip(dy)
                        .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
                        .collect()
                });
            }
            &Op::Sigmoid(x) => {
                self.accumulate(grads, x, || {
                    out.iter().zip(dy).map(|(y, g)| y * (1.0 - y) * g).collect()
                });
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, || dy.to_vec());
                self.accumulate(grads, b, || dy.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, || dy.to_vec());
                self.accumulate(grads, b, || dy.iter().map(|g| -g).collect());
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                self.accumulate(grads, a, || dy.iter().zip(bv).map(|(g, y)| g * y).collect());
                self.accumulate(grads, b, || dy.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            &Op::Scale(x, a) => {
                self.accumulate(grads, x, || dy.iter().map(|g| a * g).collect());
            }
            &Op::ScalarMul { s, x } => {
                let sv = self.value(s).data()[0];
                let xv = self.value(x).data();
                self.accumulate(grads, s, || vec![dy.iter().zip(xv).map(|(g, v)| g * v).sum()]);
                self.accumulate(grads, x, || dy.iter().map(|g| sv * g).collect());
            }
            &Op::ChannelScale { x, s } => {
                let [_, h, w] = self.value(x).dims3("channel_scale").expect("rank 3");
                let plane = h * w;
                let (xv, sv) = (self.value(x).data(), self.value(s).data());
                self.accumulate(grads, x, || {
                    dy.iter().enumerate().map(|(i, g)| sv[i / plane] * g).collect()
                });
                self.accumulate(grads, s, || {
                    dy.chunks_exact(plane)
                        .zip(xv.chunks_exact(plane))
                        .map(|(g, v)| g.iter().zip(v).map(|(a, b)| a * b).sum())
                        .collect()
                });
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let n = self.value(x).numel();
                    self.accumulate(grads, x, || dy[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            &Op::Reshape(x) => self.accumulate(grads, x, || dy.to_vec()),
            &Op::Transpose(x) => {
                let &[r, c] = node.value.shape() else { unreachable!() };
                self.accumulate(grads, x, || kernels::transpose(dy, r, c));
            }
            &Op::Sum(x) => {
                let n = self.value(x).numel();
                self.accumulate(grads, x, || vec![dy[0]; n]);
            }
            &Op::ChannelMean(x) => {
                let [_, h, w] = self.value(x).dims3("channel_mean").expect("rank 3");
                let plane = h * w;
                let n = plane as f64;
                let numel = self.value(x).numel();
                self.accumulate(grads, x, || (0..numel).map(|i| dy[i / plane] / n).collect());
            }
            &Op::ChannelVar(x) => {
                let [_, h, w] = self.value(x).dims3("channel_var").expect("rank 3");
                let plane = h * w;
                let n = plane as f64;
                let xv = self.value(x).data();
                self.accumulate(grads, x, || {
                    let mut dx = Vec::with_capacity(xv.len());
                    for (c, p) in xv.chunks_exact(plane).enumerate() {
                        let mean = p.iter().sum::<f64>() / n;
                        dx.extend(p.iter().map(|v| 2.0 * (v - mean) / n * dy[c]));
                    }
                    dx
                });
            }
        }
    }
}

pub(crate) fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}
