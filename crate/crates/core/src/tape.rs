//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value. [`Tape::backward`]
//! walks the nodes in exact reverse order of recording and accumulates
//! gradients into the inputs of each node. Leaves created with
//! [`Tape::param`] receive gradients; leaves created with [`Tape::constant`]
//! (and everything computed only from constants) are skipped.

use crate::error::{bail, Result};
use crate::kernels::{self, conv_out, ConvGeom, NORM_EPS};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, stride: usize },
    ConvTranspose2d { x: Var, w: Var, b: Var, stride: usize, pad: usize, out_pad: usize },
    ReflectionPad { x: Var, pad: usize },
    InstanceNorm { x: Var },
    Relu { x: Var },
    Linear { x: Var, w: Var, b: Var },
    ChannelMean { x: Var },
    ChannelStd { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: f64 },
    Sum { a: Var },
    SqDist { a: Var, b: Var },
    CenterCrop { x: Var, crop: usize },
    Clamp { x: Var, lo: f64, hi: f64 },
    Reshape { x: Var },
    Narrow { x: Var, start: usize, len: usize },
    Concat { xs: Vec<Var> },
    TotalVariation { x: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    /// Per-op intermediates kept for the backward pass.
    saved: Vec<T>,
    requires_grad: bool,
}

/// Recorded computation. Single-threaded; independent tapes may run on
/// separate threads.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn dims4<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    t.dims4().map_err(|_| crate::error::Error::Dimension(format!("{what}: expected rank-4 input, got {:?}", t.shape())))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, saved: Vec::new(), requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn inputs(op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                vec![*x, *w, *b]
            }
            Op::ReflectionPad { x, .. }
            | Op::InstanceNorm { x }
            | Op::Relu { x }
            | Op::ChannelMean { x }
            | Op::ChannelStd { x }
            | Op::CenterCrop { x, .. }
            | Op::Clamp { x, .. }
            | Op::Reshape { x }
            | Op::Narrow { x, .. }
            | Op::TotalVariation { x } => vec![*x],
            Op::Scale { a, .. } | Op::Sum { a } => vec![*a],
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::SqDist { a, b } => vec![*a, *b],
            Op::Concat { xs } => xs.clone(),
        }
    }

    fn push(&mut self, op: Op, shape_hint: Option<&[usize]>) -> Result<Var> {
        let (value, saved) = self.compute(&op, shape_hint)?;
        value.check_finite("operation output")?;
        let requires_grad = Self::inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, saved, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Re-evaluates every recorded operation from the current leaf values and
    /// reports whether each output is bit-identical to what was recorded.
    pub fn replay_matches(&self) -> Result<bool> {
        for node in &self.nodes {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let hint = node.value.shape().to_vec();
            let (value, _) = self.compute(&node.op, Some(&hint))?;
            let same = value.shape() == node.value.shape()
                && value.data().iter().zip(node.value.data()).all(|(a, b)| a.to_bits_eq(*b));
            if !same {
                return Ok(false);
            }
        }
        Ok(true)
    }

    // ---- recorded operations ------------------------------------------------

    /// Strided, unpadded 2-D correlation. `filters` is `[Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        self.push(Op::Conv2d { x, w, b, stride }, None)
    }

    /// Adjoint of a zero-padded conv2d with the same filters. `filters` is
    /// `[Cin, Cout, kh, kw]`; output extent is `(H-1)*stride - 2*pad + k + out_pad`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var> {
        self.push(Op::ConvTranspose2d { x, w, b, stride, pad, out_pad }, None)
    }

    pub fn reflection_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        self.push(Op::ReflectionPad { x, pad }, None)
    }

    /// Per-(sample, channel) normalisation with unit scale and zero shift.
    pub fn instance_norm(&mut self, x: Var) -> Result<Var> {
        self.push(Op::InstanceNorm { x }, None)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Relu { x }, None)
    }

    /// `x·wᵀ + b` with `x: [N, Din]`, `w: [Dout, Din]`, `b: [Dout]`.
    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.push(Op::Linear { x, w, b }, None)
    }

    /// Per-(sample, channel) population mean and `sqrt(var + 1e-5)`, each `[N, C]`.
    pub fn channel_mean_std(&mut self, x: Var) -> Result<(Var, Var)> {
        let mean = self.push(Op::ChannelMean { x }, None)?;
        let std = self.push(Op::ChannelStd { x }, None)?;
        Ok((mean, std))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add { a, b }, None)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub { a, b }, None)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul { a, b }, None)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.push(Op::Scale { a, factor }, None)
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum { a }, None)
    }

    /// `Σ (a - b)²` as a rank-0 tensor.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::SqDist { a, b }, None)
    }

    /// Drops `crop / 2` rows and columns from every border; `crop` must be even.
    pub fn center_crop(&mut self, x: Var, crop: usize) -> Result<Var> {
        self.push(Op::CenterCrop { x, crop }, None)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.push(Op::Clamp { x, lo, hi }, None)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape { x }, Some(shape))
    }

    /// Columns `start..start+len` of a rank-2 value.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::Narrow { x, start, len }, None)
    }

    /// Concatenates rank-2 values along their second axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        self.push(Op::Concat { xs: xs.to_vec() }, None)
    }

    /// Anisotropic squared total variation of `[N, C, H, W]`, normalised by
    /// `C·H·W` per image and summed over the batch.
    pub fn total_variation(&mut self, x: Var) -> Result<Var> {
        self.push(Op::TotalVariation { x }, None)
    }

    // ---- forward ------------------------------------------------------------

    fn compute(&self, op: &Op, shape_hint: Option<&[usize]>) -> Result<(Tensor<T>, Vec<T>)> {
        let none = Vec::new();
        match *op {
            Op::Leaf => bail!(Usage, "leaves are not computed"),
            Op::Conv2d { x, w, b, stride } => Ok((self.fwd_conv(x, w, b, stride)?, none)),
            Op::ConvTranspose2d { x, w, b, stride, pad, out_pad } => {
                Ok((self.fwd_conv_t(x, w, b, stride, pad, out_pad)?, none))
            }
            Op::ReflectionPad { x, pad } => {
                let xv = self.val(x);
                let (n, c, h, wd) = dims4(xv, "reflection_pad")?;
                if pad >= h || pad >= wd {
                    bail!(Dimension, "reflection pad {pad} needs extents above it, got {h}x{wd}");
                }
                let (oh, ow) = (h + 2 * pad, wd + 2 * pad);
                let src = xv.data();
                let mut out = Vec::with_capacity(n * c * oh * ow);
                for s in 0..n * c {
                    let plane = &src[s * h * wd..(s + 1) * h * wd];
                    for y in 0..oh {
                        let row = &plane[kernels::reflect(y, pad, h) * wd..][..wd];
                        out.extend((0..ow).map(|xx| row[kernels::reflect(xx, pad, wd)]));
                    }
                }
                Ok((Tensor::new(&[n, c, oh, ow], out)?, none))
            }
            Op::InstanceNorm { x } => {
                let xv = self.val(x);
                let (n, c, h, w) = dims4(xv, "instance_norm")?;
                let hw = h * w;
                let eps = T::from_f64(NORM_EPS);
                let mut out = Vec::with_capacity(xv.len());
                let mut inv = Vec::with_capacity(n * c);
                for slice in xv.data().chunks_exact(hw) {
                    let (mean, var) = kernels::mean_var(slice);
                    let r = T::one() / (var + eps).sqrt();
                    inv.push(r);
                    out.extend(slice.iter().map(|&v| (v - mean) * r));
                }
                Ok((Tensor::new(&[n, c, h, w], out)?, inv))
            }
            Op::Relu { x } => Ok((self.val(x).map(|v| if v > T::zero() { v } else { T::zero() }), none)),
            Op::Linear { x, w, b } => {
                let (xv, wv, bv) = (self.val(x), self.val(w), self.val(b));
                let (n, din) = xv.dims2()?;
                let (dout, din2) = wv.dims2()?;
                if din != din2 || bv.shape() != [dout] {
                    bail!(
                        Dimension,
                        "fully_connected: input {:?}, weight {:?}, bias {:?}",
                        xv.shape(),
                        wv.shape(),
                        bv.shape()
                    );
                }
                let mut out = Vec::with_capacity(n * dout);
                for _ in 0..n {
                    out.extend_from_slice(bv.data());
                }
                kernels::gemm_nt(n, dout, din, xv.data(), wv.data(), &mut out);
                Ok((Tensor::new(&[n, dout], out)?, none))
            }
            Op::ChannelMean { x } => {
                let xv = self.val(x);
                let (n, c, h, w) = dims4(xv, "channel_mean_std")?;
                let out = xv.data().chunks_exact(h * w).map(|s| kernels::mean_var(s).0).collect();
                Ok((Tensor::new(&[n, c], out)?, none))
            }
            Op::ChannelStd { x } => {
                let xv = self.val(x);
                let (n, c, h, w) = dims4(xv, "channel_mean_std")?;
                let eps = T::from_f64(NORM_EPS);
                let mut means = Vec::with_capacity(n * c);
                let out = xv
                    .data()
                    .chunks_exact(h * w)
                    .map(|s| {
                        let (m, v) = kernels::mean_var(s);
                        means.push(m);
                        (v + eps).sqrt()
                    })
                    .collect();
                Ok((Tensor::new(&[n, c], out)?, means))
            }
            Op::Add { a, b } => self.zip(a, b, |p, q| p + q),
            Op::Sub { a, b } => self.zip(a, b, |p, q| p - q),
            Op::Mul { a, b } => self.zip(a, b, |p, q| p * q),
            Op::Scale { a, factor } => {
                let f = T::from_f64(factor);
                Ok((self.val(a).map(|v| v * f), none))
            }
            Op::Sum { a } => Ok((Tensor::scalar(self.val(a).sum()), none)),
            Op::SqDist { a, b } => {
                let (av, bv) = (self.val(a), self.val(b));
                av.same_shape(bv)?;
                let s = av.data().iter().zip(bv.data()).fold(T::zero(), |acc, (&p, &q)| acc + (p - q) * (p - q));
                Ok((Tensor::scalar(s), none))
            }
            Op::CenterCrop { x, crop } => {
                let xv = self.val(x);
                let (n, c, h, w) = dims4(xv, "center_crop")?;
                if crop % 2 != 0 || crop >= h || crop >= w {
                    bail!(Dimension, "cannot crop {crop} from {h}x{w}");
                }
                let (oh, ow, off) = (h - crop, w - crop, crop / 2);
                let mut out = Vec::with_capacity(n * c * oh * ow);
                for plane in xv.data().chunks_exact(h * w) {
                    for y in 0..oh {
                        out.extend_from_slice(&plane[(y + off) * w + off..][..ow]);
                    }
                }
                Ok((Tensor::new(&[n, c, oh, ow], out)?, none))
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
                Ok((self.val(x).map(|v| v.max(lo).min(hi)), none))
            }
            Op::Reshape { x } => {
                let shape = shape_hint.expect("reshape carries its target shape");
                Ok((self.val(x).clone().reshape(shape)?, none))
            }
            Op::Narrow { x, start, len } => {
                let xv = self.val(x);
                let (n, d) = xv.dims2()?;
                if len == 0 || start + len > d {
                    bail!(Dimension, "narrow {start}..{} out of range for width {d}", start + len);
                }
                let mut out = Vec::with_capacity(n * len);
                for row in xv.data().chunks_exact(d) {
                    out.extend_from_slice(&row[start..start + len]);
                }
                Ok((Tensor::new(&[n, len], out)?, none))
            }
            Op::Concat { ref xs } => {
                let Some(&first) = xs.first() else {
                    bail!(Dimension, "concat of nothing");
                };
                let n = self.val(first).dims2()?.0;
                let mut widths = Vec::with_capacity(xs.len());
                for &v in xs {
                    let (rows, d) = self.val(v).dims2()?;
                    if rows != n {
                        bail!(Dimension, "concat row mismatch: {rows} vs {n}");
                    }
                    widths.push(d);
                }
                let total: usize = widths.iter().sum();
                let mut out = Vec::with_capacity(n * total);
                for r in 0..n {
                    for (&v, &d) in xs.iter().zip(&widths) {
                        out.extend_from_slice(&self.val(v).data()[r * d..(r + 1) * d]);
                    }
                }
                Ok((Tensor::new(&[n, total], out)?, none))
            }
            Op::TotalVariation { x } => {
                let xv = self.val(x);
                let (_, c, h, w) = dims4(xv, "tv_loss")?;
                if h < 2 || w < 2 {
                    bail!(Dimension, "tv_loss needs at least 2x2, got {h}x{w}");
                }
                let norm = T::from_f64((c * h * w) as f64);
                let per = c * h * w;
                let mut total = T::zero();
                for img in xv.data().chunks_exact(per) {
                    let mut s = T::zero();
                    for plane in img.chunks_exact(h * w) {
                        for y in 0..h {
                            for xx in 0..w {
                                let v = plane[y * w + xx];
                                if y + 1 < h {
                                    let d = plane[(y + 1) * w + xx] - v;
                                    s = s + d * d;
                                }
                                if xx + 1 < w {
                                    let d = plane[y * w + xx + 1] - v;
                                    s = s + d * d;
                                }
                            }
                        }
                    }
                    total = total + s / norm;
                }
                Ok((Tensor::scalar(total), none))
            }
        }
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, Vec<T>)> {
        let (av, bv) = (self.val(a), self.val(b));
        av.same_shape(bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok((Tensor::new(av.shape(), data)?, Vec::new()))
    }

    fn conv_geom(&self, x: Var, w: Var, b: Var, stride: usize) -> Result<(usize, usize, ConvGeom)> {
        let (xv, wv, bv) = (self.val(x), self.val(w), self.val(b));
        let (n, cin, h, wd) = dims4(xv, "conv2d")?;
        let (cout, cin2, kh, kw) = dims4(wv, "conv2d filters")?;
        if cin != cin2 || bv.shape() != [cout] {
            bail!(Dimension, "conv2d: input {:?}, filters {:?}, bias {:?}", xv.shape(), wv.shape(), bv.shape());
        }
        let (Some(oh), Some(ow)) = (conv_out(h, kh, stride, 0), conv_out(wd, kw, stride, 0)) else {
            bail!(Dimension, "conv2d: kernel {kh}x{kw} stride {stride} does not fit {h}x{wd}");
        };
        Ok((n, cout, ConvGeom { channels: cin, height: h, width: wd, kh, kw, stride, pad: 0, out_h: oh, out_w: ow }))
    }

    fn fwd_conv(&self, x: Var, w: Var, b: Var, stride: usize) -> Result<Tensor<T>> {
        let (n, cout, g) = self.conv_geom(x, w, b, stride)?;
        let (xv, wv, bv) = (self.val(x), self.val(w), self.val(b));
        let (isz, p) = (g.channels * g.height * g.width, g.cols());
        let mut cols = vec![T::zero(); g.rows() * p];
        let mut out = vec![T::zero(); n * cout * p];
        for (i, o) in out.chunks_exact_mut(cout * p).enumerate() {
            kernels::im2col(&xv.data()[i * isz..(i + 1) * isz], &g, &mut cols);
            for (co, row) in o.chunks_exact_mut(p).enumerate() {
                row.fill(bv.data()[co]);
            }
            kernels::gemm_nn(cout, p, g.rows(), wv.data(), &cols, o);
        }
        Tensor::new(&[n, cout, g.out_h, g.out_w], out)
    }

    fn conv_t_geom(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<(usize, usize, ConvGeom)> {
        let (xv, wv, bv) = (self.val(x), self.val(w), self.val(b));
        let (n, cin, h, wd) = dims4(xv, "conv_transpose2d")?;
        let (cin2, cout, kh, kw) = dims4(wv, "conv_transpose2d filters")?;
        if cin != cin2 || bv.shape() != [cout] {
            bail!(
                Dimension,
                "conv_transpose2d: input {:?}, filters {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            );
        }
        if stride == 0 || out_pad >= stride {
            bail!(Dimension, "conv_transpose2d: need stride >= 1 and out_pad < stride");
        }
        let full_h = (h - 1) * stride + kh + out_pad;
        let full_w = (wd - 1) * stride + kw + out_pad;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            bail!(Dimension, "conv_transpose2d: padding {pad} swallows the output");
        }
        let (oh, ow) = (full_h - 2 * pad, full_w - 2 * pad);
        // The geometry describes the forward correlation whose adjoint this is.
        let g = ConvGeom { channels: cout, height: oh, width: ow, kh, kw, stride, pad, out_h: h, out_w: wd };
        debug_assert_eq!(conv_out(oh, kh, stride, pad), Some(h));
        Ok((n, cin, g))
    }

    fn fwd_conv_t(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize, out_pad: usize) -> Result<Tensor<T>> {
        let (n, cin, g) = self.conv_t_geom(x, w, b, stride, pad, out_pad)?;
        let (xv, wv, bv) = (self.val(x), self.val(w), self.val(b));
        let cout = g.channels;
        let (p, osz) = (g.cols(), g.height * g.width);
        let mut cols = vec![T::zero(); g.rows() * p];
        let mut out = vec![T::zero(); n * cout * osz];
        for (i, o) in out.chunks_exact_mut(cout * osz).enumerate() {
            for (co, plane) in o.chunks_exact_mut(osz).enumerate() {
                plane.fill(bv.data()[co]);
            }
            cols.fill(T::zero());
            kernels::gemm_tn(g.rows(), p, cin, wv.data(), &xv.data()[i * cin * p..(i + 1) * cin * p], &mut cols);
            kernels::col2im(&cols, &g, o);
        }
        Tensor::new(&[n, cout, g.height, g.width], out)
    }

    // ---- backward -----------------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every value that
    /// requires one. Parameters the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.val(loss);
        if lv.len() != 1 {
            bail!(Usage, "backward needs a scalar loss, got shape {:?}", lv.shape());
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads)?;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[i].get_or_insert_with(|| Tensor::zeros(node.value.shape()));
                g.check_finite("gradient")?;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gd = g.data();
        match node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride } => {
                let (n, cout, geom) = self.conv_geom(x, w, b, stride)?;
                let (xv, wv) = (self.val(x), self.val(w));
                let (isz, p, k) = (geom.channels * geom.height * geom.width, geom.cols(), geom.rows());
                let mut cols = vec![T::zero(); k * p];
                let mut dcols = vec![T::zero(); k * p];
                let mut dx = self.wants(x).then(|| vec![T::zero(); xv.len()]);
                let mut dw = self.wants(w).then(|| vec![T::zero(); wv.len()]);
                let mut db = self.wants(b).then(|| vec![T::zero(); cout]);
                for i in 0..n {
                    let gy = &gd[i * cout * p..(i + 1) * cout * p];
                    if let Some(db) = db.as_mut() {
                        for (co, row) in gy.chunks_exact(p).enumerate() {
                            db[co] = db[co] + row.iter().fold(T::zero(), |a, &v| a + v);
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        kernels::im2col(&xv.data()[i * isz..(i + 1) * isz], &geom, &mut cols);
                        kernels::gemm_nt(cout, k, p, gy, &cols, dw);
                    }
                    if let Some(dx) = dx.as_mut() {
                        dcols.fill(T::zero());
                        kernels::gemm_tn(k, p, cout, wv.data(), gy, &mut dcols);
                        kernels::col2im(&dcols, &geom, &mut dx[i * isz..(i + 1) * isz]);
                    }
                }
                accumulate(grads, x, xv.shape(), dx)?;
                accumulate(grads, w, wv.shape(), dw)?;
                accumulate(grads, b, &[cout], db)?;
            }
            Op::ConvTranspose2d { x, w, b, stride, pad, out_pad } => {
                let (n, cin, geom) = self.conv_t_geom(x, w, b, stride, pad, out_pad)?;
                let (xv, wv) = (self.val(x), self.val(w));
                let cout = geom.channels;
                let (p, k, osz) = (geom.cols(), geom.rows(), geom.height * geom.width);
                let mut dcols = vec![T::zero(); k * p];
                let mut dx = self.wants(x).then(|| vec![T::zero(); xv.len()]);
                let mut dw = self.wants(w).then(|| vec![T::zero(); wv.len()]);
                let mut db = self.wants(b).then(|| vec![T::zero(); cout]);
                for i in 0..n {
                    let gy = &gd[i * cout * osz..(i + 1) * cout * osz];
                    if let Some(db) = db.as_mut() {
                        for (co, plane) in gy.chunks_exact(osz).enumerate() {
                            db[co] = db[co] + plane.iter().fold(T::zero(), |a, &v| a + v);
                        }
                    }
                    if dx.is_none() && dw.is_none() {
                        continue;
                    }
                    kernels::im2col(gy, &geom, &mut dcols);
                    if let Some(dx) = dx.as_mut() {
                        kernels::gemm_nn(cin, p, k, wv.data(), &dcols, &mut dx[i * cin * p..(i + 1) * cin * p]);
                    }
                    if let Some(dw) = dw.as_mut() {
                        kernels::gemm_nt(cin, k, p, &xv.data()[i * cin * p..(i + 1) * cin * p], &dcols, dw);
                    }
                }
                accumulate(grads, x, xv.shape(), dx)?;
                accumulate(grads, w, wv.shape(), dw)?;
                accumulate(grads, b, &[cout], db)?;
            }
            Op::ReflectionPad { x, pad } => {
                let xv = self.val(x);
                let (_, _, h, w) = xv.dims4()?;
                let (oh, ow) = (h + 2 * pad, w + 2 * pad);
                let mut dx = vec![T::zero(); xv.len()];
                for (src, dst) in gd.chunks_exact(oh * ow).zip(dx.chunks_exact_mut(h * w)) {
                    for y in 0..oh {
                        let ry = kernels::reflect(y, pad, h);
                        for xx in 0..ow {
                            let d = &mut dst[ry * w + kernels::reflect(xx, pad, w)];
                            *d = *d + src[y * ow + xx];
                        }
                    }
                }
                accumulate(grads, x, xv.shape(), Some(dx))?;
            }
            Op::InstanceNorm { x } => {
                let (_, _, h, w) = node.value.dims4()?;
                let hw = h * w;
                let nf = T::from_f64(hw as f64);
                let mut dx = Vec::with_capacity(node.value.len());
                for ((gy, y), &r) in gd.chunks_exact(hw).zip(node.value.data().chunks_exact(hw)).zip(&node.saved) {
                    let sg = gy.iter().fold(T::zero(), |a, &v| a + v);
                    let sgy = gy.iter().zip(y).fold(T::zero(), |a, (&p, &q)| a + p * q);
                    dx.extend(gy.iter().zip(y).map(|(&gv, &yv)| r / nf * (nf * gv - sg - yv * sgy)));
                }
                accumulate(grads, x, node.value.shape(), Some(dx))?;
            }
            Op::Relu { x } => {
                let xv = self.val(x);
                let dx = gd.iter().zip(xv.data()).map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() }).collect();
                accumulate(grads, x, xv.shape(), Some(dx))?;
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.val(x), self.val(w));
                let (n, din) = xv.dims2()?;
                let dout = wv.dims2()?.0;
                if self.wants(x) {
                    let mut dx = vec![T::zero(); n * din];
                    kernels::gemm_nn(n, din, dout, gd, wv.data(), &mut dx);
                    accumulate(grads, x, xv.shape(), Some(dx))?;
                }
                if self.wants(w) {
                    let mut dw = vec![T::zero(); dout * din];
                    kernels::gemm_tn(dout, din, n, gd, xv.data(), &mut dw);
                    accumulate(grads, w, wv.shape(), Some(dw))?;
                }
                if self.wants(b) {
                    let mut db = vec![T::zero(); dout];
                    for row in gd.chunks_exact(dout) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    accumulate(grads, b, &[dout], Some(db))?;
                }
            }
            Op::ChannelMean { x } => {
                let xv = self.val(x);
                let (_, _, h, w) = xv.dims4()?;
                let nf = T::from_f64((h * w) as f64);
                let mut dx = Vec::with_capacity(xv.len());
                for &gv in gd {
                    dx.extend(std::iter::repeat_n(gv / nf, h * w));
                }
                accumulate(grads, x, xv.shape(), Some(dx))?;
            }
            Op::ChannelStd { x } => {
                let xv = self.val(x);
                let (_, _, h, w) = xv.dims4()?;
                let nf = T::from_f64((h * w) as f64);
                let mut dx = Vec::with_capacity(xv.len());
                for (((slice, &gv), &s), &m) in
                    xv.data().chunks_exact(h * w).zip(gd).zip(node.value.data()).zip(&node.saved)
                {
                    let f = gv / (nf * s);
                    dx.extend(slice.iter().map(|&v| (v - m) * f));
                }
                accumulate(grads, x, xv.shape(), Some(dx))?;
            }
            Op::Add { a, b } => {
                accumulate(grads, a, g.shape(), self.wants(a).then(|| gd.to_vec()))?;
                accumulate(grads, b, g.shape(), self.wants(b).then(|| gd.to_vec()))?;
            }
            Op::Sub { a, b } => {
                accumulate(grads, a, g.shape(), self.wants(a).then(|| gd.to_vec()))?;
                accumulate(grads, b, g.shape(), self.wants(b).then(|| gd.iter().map(|&v| -v).collect()))?;
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.val(a), self.val(b));
                let da = self.wants(a).then(|| gd.iter().zip(bv.data()).map(|(&p, &q)| p * q).collect());
                let db = self.wants(b).then(|| gd.iter().zip(av.data()).map(|(&p, &q)| p * q).collect());
                accumulate(grads, a, g.shape(), da)?;
                accumulate(grads, b, g.shape(), db)?;
            }
            Op::Scale { a, factor } => {
                let f = T::from_f64(factor);
                accumulate(grads, a, g.shape(), Some(gd.iter().map(|&v| v * f).collect()))?;
            }
            Op::Sum { a } => {
                let av = self.val(a);
                accumulate(grads, a, av.shape(), Some(vec![gd[0]; av.len()]))?;
            }
            Op::SqDist { a, b } => {
                let (av, bv) = (self.val(a), self.val(b));
                let two = T::from_f64(2.0) * gd[0];
                let diff: Vec<T> = av.data().iter().zip(bv.data()).map(|(&p, &q)| two * (p - q)).collect();
                if self.wants(b) {
                    accumulate(grads, b, bv.shape(), Some(diff.iter().map(|&v| -v).collect()))?;
                }
                if self.wants(a) {
                    accumulate(grads, a, av.shape(), Some(diff))?;
                }
            }
            Op::CenterCrop { x, crop } => {
                let xv = self.val(x);
                let (_, _, h, w) = xv.dims4()?;
                let (oh, ow, off) = (h - crop, w - crop, crop / 2);
                let mut dx = vec![T::zero(); xv.len()];
                for (src, dst) in gd.chunks_exact(oh * ow).zip(dx.chunks_exact_mut(h * w)) {
                    for y in 0..oh {
                        dst[(y + off) * w + off..][..ow].copy_from_slice(&src[y * ow..(y + 1) * ow]);
                    }
                }
                accumulate(grads, x, xv.shape(), Some(dx))?;
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.val(x);
                let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
                let dx = gd
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &v)| if v >= lo && v <= hi { gv } else { T::zero() })
                    .collect();
                accumulate(grads, x, xv.shape(), Some(dx))?;
            }
            Op::Reshape { x } => {
                accumulate(grads, x, self.val(x).shape(), Some(gd.to_vec()))?;
            }
            Op::Narrow { x, start, len } => {
                let xv = self.val(x);
                let (_, d) = xv.dims2()?;
                let mut dx = vec![T::zero(); xv.len()];
                for (src, dst) in gd.chunks_exact(len).zip(dx.chunks_exact_mut(d)) {
                    dst[start..start + len].copy_from_slice(src);
                }
                accumulate(grads, x, xv.shape(), Some(dx))?;
            }
            Op::Concat { ref xs } => {
                let total = node.value.dims2()?.1;
                let mut offset = 0;
                for &v in xs {
                    let (_, d) = self.val(v).dims2()?;
                    if self.wants(v) {
                        let mut dx = Vec::with_capacity(self.val(v).len());
                        for row in gd.chunks_exact(total) {
                            dx.extend_from_slice(&row[offset..offset + d]);
                        }
                        accumulate(grads, v, self.val(v).shape(), Some(dx))?;
                    }
                    offset += d;
                }
            }
            Op::TotalVariation { x } => {
                let xv = self.val(x);
                let (_, c, h, w) = xv.dims4()?;
                let f = T::from_f64(2.0) * gd[0] / T::from_f64((c * h * w) as f64);
                let mut dx = vec![T::zero(); xv.len()];
                for (plane, dst) in xv.data().chunks_exact(h * w).zip(dx.chunks_exact_mut(h * w)) {
                    for y in 0..h {
                        for xx in 0..w {
                            let i = y * w + xx;
                            if y + 1 < h {
                                let d = (plane[i + w] - plane[i]) * f;
                                dst[i + w] = dst[i + w] + d;
                                dst[i] = dst[i] - d;
                            }
                            if xx + 1 < w {
                                let d = (plane[i + 1] - plane[i]) * f;
                                dst[i + 1] = dst[i + 1] + d;
                                dst[i] = dst[i] - d;
                            }
                        }
                    }
                }
                accumulate(grads, x, xv.shape(), Some(dx))?;
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    shape: &[usize],
    delta: Option<Vec<T>>,
) -> Result<()> {
    let Some(delta) = delta else { return Ok(()) };
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                *e = *e + d;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape, delta)?),
    }
    Ok(())
}

trait BitsEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<T: Scalar> BitsEq for T {
    fn to_bits_eq(self, other: Self) -> bool {
        // Both NaN never happens: outputs are checked finite on record.
        self == other && self.is_sign_negative() == other.is_sign_negative()
    }
}
