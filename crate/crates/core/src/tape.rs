//! Reverse-mode autodiff on a Wengert tape. Forward calls append nodes (a
//! value plus the op that produced it) to a flat arena; `backward` replays
//! the ops in reverse, accumulating vector-Jacobian products. Node ids are
//! indices into the arena, so parents always precede children and a single
//! reverse sweep suffices.
//!
//! Two tape flavors exist: a recording tape (`Tape::new`) that supports
//! `backward`, and an inference tape (`Tape::inference`) that runs the same
//! forward kernels without keeping op metadata. Only recording tapes count
//! toward [`tapes_constructed`], which is how tests pin down "exactly one
//! gradient evaluation per iteration".

use std::sync::atomic::{AtomicU64, Ordering};

use crate::kernels::{self, BlurBackend, Pad};
use crate::scalar::Scalar;
use crate::tensor::{assert_same_shape, Tensor};

pub type NodeId = usize;

static TAPES_CONSTRUCTED: AtomicU64 = AtomicU64::new(0);

/// Number of recording tapes constructed so far in this process. Each
/// gradient evaluation builds exactly one.
pub fn tapes_constructed() -> u64 {
    TAPES_CONSTRUCTED.load(Ordering::Relaxed)
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    SumAll(NodeId),
    LeakyRelu(NodeId, T),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Linear { wgt: NodeId, bias: NodeId, inp: NodeId },
    Conv2d { inp: NodeId, wgt: NodeId, stride: usize, pad: Pad },
    Upsample2x(NodeId),
    ChannelNorm { inp: NodeId, gain: NodeId, shift: NodeId, eps: T },
    ConcatChannels(NodeId, NodeId),
    BroadcastChannel(NodeId),
    CropSpatial { inp: NodeId, top: usize, left: usize },
    Reshape(NodeId),
    BlurValid { image: NodeId, kernel: NodeId, backend: BlurBackend },
    TvSmooth { inp: NodeId, eps: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Scalar> Tape<T> {
    /// A recording tape: supports `backward`.
    pub fn new() -> Self {
        TAPES_CONSTRUCTED.fetch_add(1, Ordering::Relaxed);
        Tape { nodes: Vec::new(), recording: true }
    }

    /// A non-recording tape: same forward semantics, no gradient support,
    /// not counted by [`tapes_constructed`].
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), recording: false }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, needs_grad: needs_grad && self.recording });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Constant input: never receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input: gradient is produced by `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.zip_values("add", a, b, |x, y| x + y);
        self.push(value, Op::Add(a, b), self.needs(a) || self.needs(b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.zip_values("sub", a, b, |x, y| x - y);
        self.push(value, Op::Sub(a, b), self.needs(a) || self.needs(b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.zip_values("mul", a, b, |x, y| x * y);
        self.push(value, Op::Mul(a, b), self.needs(a) || self.needs(b))
    }

    fn zip_values(&self, what: &str, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_same_shape(what, va.shape(), vb.shape());
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(va.shape(), data)
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let value = self.nodes[a].value.map(|x| x * s);
        self.push(value, Op::Scale(a, s), self.needs(a))
    }

    /// Sum of all entries; result has shape `[1]`.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(crate::scalar::kahan_sum(self.nodes[a].value.data().iter().copied()));
        self.push(value, Op::SumAll(a), self.needs(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: T) -> NodeId {
        let va = &self.nodes[a].value;
        let mut value = Tensor::zeros(va.shape());
        kernels::leaky_relu_fwd(va.data(), slope, value.data_mut());
        self.push(value, Op::LeakyRelu(a, slope), self.needs(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let mut value = Tensor::zeros(va.shape());
        kernels::sigmoid_fwd(va.data(), value.data_mut());
        self.push(value, Op::Sigmoid(a), self.needs(a))
    }

    /// Softmax over the flattened tensor; preserves shape.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let mut value = Tensor::zeros(va.shape());
        kernels::softmax_fwd(va.data(), value.data_mut());
        self.push(value, Op::Softmax(a), self.needs(a))
    }

    /// `W x + b` for `W: [m, n]`, `b: [m]`, `x: [n]`.
    pub fn linear(&mut self, wgt: NodeId, bias: NodeId, inp: NodeId) -> NodeId {
        let (m, n) = self.nodes[wgt].value.dims2();
        assert_eq!(self.nodes[bias].value.numel(), m, "linear bias length vs rows");
        let mut value = Tensor::zeros(&[m]);
        kernels::linear_fwd(
            self.nodes[wgt].value.data(),
            self.nodes[bias].value.data(),
            self.nodes[inp].value.data(),
            (m, n),
            value.data_mut(),
        );
        let needs = self.needs(wgt) || self.needs(bias) || self.needs(inp);
        self.push(value, Op::Linear { wgt, bias, inp }, needs)
    }

    /// Cross-correlation of `inp: [cin, h, w]` with `wgt: [cout, cin, kh, kw]`.
    pub fn conv2d(&mut self, inp: NodeId, wgt: NodeId, stride: usize, pad: Pad) -> NodeId {
        assert!(stride >= 1, "conv stride must be >= 1");
        let (cin, h, w) = self.nodes[inp].value.dims3();
        let ws = self.nodes[wgt].value.shape();
        assert_eq!(ws.len(), 4, "conv weight must be rank 4, got {ws:?}");
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(wcin, cin, "conv channels: input {cin} vs weight {wcin}");
        let value = match pad {
            Pad::Valid => {
                let ho = kernels::conv_out_dim(h, kh, stride);
                let wo = kernels::conv_out_dim(w, kw, stride);
                let mut out = Tensor::zeros(&[cout, ho, wo]);
                kernels::conv2d_valid_fwd(
                    self.nodes[inp].value.data(),
                    (cin, h, w),
                    self.nodes[wgt].value.data(),
                    (cout, kh, kw),
                    stride,
                    out.data_mut(),
                );
                out
            }
            Pad::ReflectSame => {
                assert!(kh % 2 == 1 && kw % 2 == 1, "reflect-same needs odd kernel, got {kh}x{kw}");
                let p = (kh - 1) / 2;
                let padded = kernels::reflect_pad_fwd(self.nodes[inp].value.data(), (cin, h, w), p);
                let (hp, wp) = (h + 2 * p, w + 2 * p);
                let ho = kernels::conv_out_dim(hp, kh, stride);
                let wo = kernels::conv_out_dim(wp, kw, stride);
                let mut out = Tensor::zeros(&[cout, ho, wo]);
                kernels::conv2d_valid_fwd(
                    &padded,
                    (cin, hp, wp),
                    self.nodes[wgt].value.data(),
                    (cout, kh, kw),
                    stride,
                    out.data_mut(),
                );
                out
            }
        };
        let needs = self.needs(inp) || self.needs(wgt);
        self.push(value, Op::Conv2d { inp, wgt, stride, pad }, needs)
    }

    pub fn upsample2x(&mut self, a: NodeId) -> NodeId {
        let (c, h, w) = self.nodes[a].value.dims3();
        let mut value = Tensor::zeros(&[c, 2 * h, 2 * w]);
        kernels::upsample2x_fwd(self.nodes[a].value.data(), (c, h, w), value.data_mut());
        self.push(value, Op::Upsample2x(a), self.needs(a))
    }

    /// Per-channel spatial standardization with learned gain and shift.
    pub fn channel_norm(&mut self, inp: NodeId, gain: NodeId, shift: NodeId, eps: T) -> NodeId {
        let (c, h, w) = self.nodes[inp].value.dims3();
        let mut value = Tensor::zeros(&[c, h, w]);
        kernels::channel_norm_fwd(
            self.nodes[inp].value.data(),
            (c, h, w),
            self.nodes[gain].value.data(),
            self.nodes[shift].value.data(),
            eps,
            value.data_mut(),
        );
        let needs = self.needs(inp) || self.needs(gain) || self.needs(shift);
        self.push(value, Op::ChannelNorm { inp, gain, shift, eps }, needs)
    }

    /// Concatenate along the channel axis; spatial shapes must match.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ca, ha, wa) = self.nodes[a].value.dims3();
        let (cb, hb, wb) = self.nodes[b].value.dims3();
        assert_eq!((ha, wa), (hb, wb), "concat spatial mismatch: {ha}x{wa} vs {hb}x{wb}");
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.nodes[a].value.data());
        data.extend_from_slice(self.nodes[b].value.data());
        let value = Tensor::from_vec(&[ca + cb, ha, wa], data);
        self.push(value, Op::ConcatChannels(a, b), self.needs(a) || self.needs(b))
    }

    /// Spread a length-`c` vector to `[c, h, w]` by repeating each entry
    /// over the spatial extent (per-channel bias broadcast).
    pub fn broadcast_channel(&mut self, a: NodeId, h: usize, w: usize) -> NodeId {
        let c = self.nodes[a].value.numel();
        let mut data = Vec::with_capacity(c * h * w);
        for &v in self.nodes[a].value.data() {
            data.extend(std::iter::repeat_n(v, h * w));
        }
        let value = Tensor::from_vec(&[c, h, w], data);
        self.push(value, Op::BroadcastChannel(a), self.needs(a))
    }

    /// Spatial crop to `oh x ow` starting at `(top, left)`.
    pub fn crop_spatial(&mut self, a: NodeId, top: usize, left: usize, oh: usize, ow: usize) -> NodeId {
        let (c, h, w) = self.nodes[a].value.dims3();
        assert!(top + oh <= h && left + ow <= w, "crop {oh}x{ow}@({top},{left}) outside {h}x{w}");
        let src = self.nodes[a].value.data();
        let mut data = Vec::with_capacity(c * oh * ow);
        for ci in 0..c {
            for i in 0..oh {
                let base = (ci * h + top + i) * w + left;
                data.extend_from_slice(&src[base..base + ow]);
            }
        }
        let value = Tensor::from_vec(&[c, oh, ow], data);
        self.push(value, Op::CropSpatial { inp: a, top, left }, self.needs(a))
    }

    /// Same data, new shape (element count preserved).
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let value = self.nodes[a].value.reshaped(shape);
        self.push(value, Op::Reshape(a), self.needs(a))
    }

    /// True (kernel-flipping) valid convolution of `image: [c, hx, wx]` with
    /// `kernel: [k, k]`; the observation model.
    pub fn blur_valid(&mut self, image: NodeId, kernel: NodeId, backend: BlurBackend) -> NodeId {
        let (c, hx, wx) = self.nodes[image].value.dims3();
        let (k, k2) = self.nodes[kernel].value.dims2();
        assert_eq!(k, k2, "blur kernel must be square, got {k}x{k2}");
        let h = kernels::conv_out_dim(hx, k, 1);
        let w = kernels::conv_out_dim(wx, k, 1);
        let mut value = Tensor::zeros(&[c, h, w]);
        kernels::blur_valid_fwd(
            self.nodes[image].value.data(),
            (c, hx, wx),
            self.nodes[kernel].value.data(),
            k,
            backend,
            value.data_mut(),
        );
        let needs = self.needs(image) || self.needs(kernel);
        self.push(value, Op::BlurValid { image, kernel, backend }, needs)
    }

    /// Smoothed isotropic total variation (raw sum); shape `[1]`.
    pub fn tv_smooth(&mut self, a: NodeId, eps: T) -> NodeId {
        let (c, h, w) = self.nodes[a].value.dims3();
        let value = Tensor::scalar(kernels::tv_fwd(self.nodes[a].value.data(), (c, h, w), eps));
        self.push(value, Op::TvSmooth { inp: a, eps }, self.needs(a))
    }

    /// Reverse sweep from a scalar loss node. Returns per-node gradients;
    /// entries are `None` for nodes the loss does not depend on (or that
    /// were marked as constants).
    pub fn backward(&self, loss: NodeId) -> Grads<T> {
        assert!(self.recording, "backward on an inference tape");
        assert_eq!(self.nodes[loss].value.numel(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor::scalar(T::one()));
        for i in (0..self.nodes.len()).rev() {
            if grads[i].is_none() || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            let g = rest[0].as_ref().expect("checked above");
            self.backprop_node(i, g, before);
        }
        Grads { grads }
    }

    /// Accumulate the vector-Jacobian product of node `i` into its parents'
    /// gradient slots (all parents have id < i).
    fn backprop_node(&self, i: NodeId, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let nodes = &self.nodes;
        match nodes[i].op {
            Op::Leaf => unreachable!("leaf filtered by caller"),
            Op::Add(a, b) => {
                for (id, sign) in [(a, T::one()), (b, T::one())] {
                    if self.needs(id) {
                        let dst = slot(grads, nodes, id);
                        for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                            *d = *d + sign * gv;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                for (id, sign) in [(a, T::one()), (b, -T::one())] {
                    if self.needs(id) {
                        let dst = slot(grads, nodes, id);
                        for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                            *d = *d + sign * gv;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let other = nodes[b].value.data();
                    let dst = slot(grads, nodes, a);
                    for ((d, &gv), &v) in dst.data_mut().iter_mut().zip(g.data()).zip(other) {
                        *d = *d + gv * v;
                    }
                }
                if self.needs(b) {
                    let other = nodes[a].value.data();
                    let dst = slot(grads, nodes, b);
                    for ((d, &gv), &v) in dst.data_mut().iter_mut().zip(g.data()).zip(other) {
                        *d = *d + gv * v;
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.needs(a) {
                    let dst = slot(grads, nodes, a);
                    for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d = *d + s * gv;
                    }
                }
            }
            Op::SumAll(a) => {
                if self.needs(a) {
                    let gv = g.item();
                    let dst = slot(grads, nodes, a);
                    for d in dst.data_mut() {
                        *d = *d + gv;
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.needs(a) {
                    let inp = nodes[a].value.data();
                    let dst = slot(grads, nodes, a);
                    kernels::leaky_relu_bwd(g.data(), inp, slope, dst.data_mut());
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(a) {
                    let out = nodes[i].value.data();
                    let dst = slot(grads, nodes, a);
                    kernels::sigmoid_bwd(g.data(), out, dst.data_mut());
                }
            }
            Op::Softmax(a) => {
                if self.needs(a) {
                    let out = nodes[i].value.data();
                    let dst = slot(grads, nodes, a);
                    kernels::softmax_bwd(g.data(), out, dst.data_mut());
                }
            }
            Op::Linear { wgt, bias, inp } => {
                let (m, n) = nodes[wgt].value.dims2();
                // Weight and input gradients are interleaved in one kernel;
                // run it when either is needed and scatter selectively.
                let mut d_wgt = Tensor::zeros(&[m, n]);
                let mut d_bias = Tensor::zeros(&[m]);
                let mut d_inp = Tensor::zeros(&[n]);
                kernels::linear_bwd(
                    g.data(),
                    nodes[wgt].value.data(),
                    nodes[inp].value.data(),
                    (m, n),
                    d_wgt.data_mut(),
                    d_bias.data_mut(),
                    d_inp.data_mut(),
                );
                for (id, d) in [(wgt, d_wgt), (bias, d_bias), (inp, d_inp)] {
                    if self.needs(id) {
                        add_into(slot(grads, nodes, id), &d);
                    }
                }
            }
            Op::Conv2d { inp, wgt, stride, pad } => {
                let (cin, h, w) = nodes[inp].value.dims3();
                let ws = nodes[wgt].value.shape();
                let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
                match pad {
                    Pad::Valid => {
                        if self.needs(inp) {
                            let wgt_data = nodes[wgt].value.data();
                            let dst = slot(grads, nodes, inp);
                            kernels::conv2d_valid_bwd_input(
                                g.data(),
                                (cin, h, w),
                                wgt_data,
                                (cout, kh, kw),
                                stride,
                                dst.data_mut(),
                            );
                        }
                        if self.needs(wgt) {
                            let inp_data = nodes[inp].value.data();
                            let dst = slot(grads, nodes, wgt);
                            kernels::conv2d_valid_bwd_weight(
                                g.data(),
                                inp_data,
                                (cin, h, w),
                                (cout, kh, kw),
                                stride,
                                dst.data_mut(),
                            );
                        }
                    }
                    Pad::ReflectSame => {
                        // The padded activation is not stored; rebuild it.
                        let p = (kh - 1) / 2;
                        let (hp, wp) = (h + 2 * p, w + 2 * p);
                        if self.needs(inp) {
                            let mut d_padded = vec![T::zero(); cin * hp * wp];
                            kernels::conv2d_valid_bwd_input(
                                g.data(),
                                (cin, hp, wp),
                                nodes[wgt].value.data(),
                                (cout, kh, kw),
                                stride,
                                &mut d_padded,
                            );
                            let dst = slot(grads, nodes, inp);
                            kernels::reflect_pad_bwd(&d_padded, (cin, h, w), p, dst.data_mut());
                        }
                        if self.needs(wgt) {
                            let padded = kernels::reflect_pad_fwd(nodes[inp].value.data(), (cin, h, w), p);
                            let dst = slot(grads, nodes, wgt);
                            kernels::conv2d_valid_bwd_weight(
                                g.data(),
                                &padded,
                                (cin, hp, wp),
                                (cout, kh, kw),
                                stride,
                                dst.data_mut(),
                            );
                        }
                    }
                }
            }
            Op::Upsample2x(a) => {
                if self.needs(a) {
                    let (c, h, w) = nodes[a].value.dims3();
                    let dst = slot(grads, nodes, a);
                    kernels::upsample2x_bwd(g.data(), (c, h, w), dst.data_mut());
                }
            }
            Op::ChannelNorm { inp, gain, shift, eps } => {
                let (c, h, w) = nodes[inp].value.dims3();
                let mut d_inp = Tensor::zeros(&[c, h, w]);
                let mut d_gain = Tensor::zeros(&[c]);
                let mut d_shift = Tensor::zeros(&[c]);
                kernels::channel_norm_bwd(
                    g.data(),
                    nodes[inp].value.data(),
                    (c, h, w),
                    nodes[gain].value.data(),
                    eps,
                    d_inp.data_mut(),
                    d_gain.data_mut(),
                    d_shift.data_mut(),
                );
                for (id, d) in [(inp, d_inp), (gain, d_gain), (shift, d_shift)] {
                    if self.needs(id) {
                        add_into(slot(grads, nodes, id), &d);
                    }
                }
            }
            Op::ConcatChannels(a, b) => {
                let na = nodes[a].value.numel();
                if self.needs(a) {
                    let dst = slot(grads, nodes, a);
                    for (d, &gv) in dst.data_mut().iter_mut().zip(&g.data()[..na]) {
                        *d = *d + gv;
                    }
                }
                if self.needs(b) {
                    let dst = slot(grads, nodes, b);
                    for (d, &gv) in dst.data_mut().iter_mut().zip(&g.data()[na..]) {
                        *d = *d + gv;
                    }
                }
            }
            Op::BroadcastChannel(a) => {
                if self.needs(a) {
                    let (c, h, w) = nodes[i].value.dims3();
                    let dst = slot(grads, nodes, a);
                    for ci in 0..c {
                        let mut acc = T::zero();
                        for &gv in &g.data()[ci * h * w..(ci + 1) * h * w] {
                            acc = acc + gv;
                        }
                        dst.data_mut()[ci] = dst.data_mut()[ci] + acc;
                    }
                }
            }
            Op::CropSpatial { inp, top, left } => {
                if self.needs(inp) {
                    let (_, h, w) = nodes[inp].value.dims3();
                    let (c, oh, ow) = nodes[i].value.dims3();
                    let dst = slot(grads, nodes, inp);
                    let dd = dst.data_mut();
                    for ci in 0..c {
                        for r in 0..oh {
                            let src = &g.data()[(ci * oh + r) * ow..(ci * oh + r + 1) * ow];
                            let base = (ci * h + top + r) * w + left;
                            for (j, &gv) in src.iter().enumerate() {
                                dd[base + j] = dd[base + j] + gv;
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if self.needs(a) {
                    let dst = slot(grads, nodes, a);
                    for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d = *d + gv;
                    }
                }
            }
            Op::BlurValid { image, kernel, backend } => {
                let (c, hx, wx) = nodes[image].value.dims3();
                let (k, _) = nodes[kernel].value.dims2();
                if self.needs(image) {
                    let kd = nodes[kernel].value.data();
                    let dst = slot(grads, nodes, image);
                    kernels::blur_valid_bwd_input(g.data(), (c, hx, wx), kd, k, backend, dst.data_mut());
                }
                if self.needs(kernel) {
                    let xd = nodes[image].value.data();
                    let dst = slot(grads, nodes, kernel);
                    kernels::blur_valid_bwd_kernel(g.data(), xd, (c, hx, wx), k, backend, dst.data_mut());
                }
            }
            Op::TvSmooth { inp, eps } => {
                if self.needs(inp) {
                    let (c, h, w) = nodes[inp].value.dims3();
                    let x = nodes[inp].value.data();
                    let dst = slot(grads, nodes, inp);
                    kernels::tv_bwd(g.item(), x, (c, h, w), eps, dst.data_mut());
                }
            }
        }
    }
}

fn slot<'g, T: Scalar>(grads: &'g mut [Option<Tensor<T>>], nodes: &[Node<T>], id: NodeId) -> &'g mut Tensor<T> {
    grads[id].get_or_insert_with(|| Tensor::zeros(nodes[id].value.shape()))
}

fn add_into<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d = *d + s;
    }
}

/// Result of a backward sweep.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient of a node, densified to zeros when the loss is independent
    /// of it.
    pub fn dense(&self, id: NodeId, shape: &[usize]) -> Tensor<T> {
        match self.get(id) {
            Some(g) => {
                assert_same_shape("gradient", g.shape(), shape);
                g.clone()
            }
            None => Tensor::zeros(shape),
        }
    }
}

/// Named parameter registry. Parameters live here between iterations; each
/// forward pass binds them onto a tape (as differentiable params or frozen
/// leaves) in registration order, which is also the initialization draw
/// order.
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Bind every parameter onto the tape in registration order. With
    /// `requires_grad = false` the parameters participate in the forward
    /// pass but the backward sweep treats them (and everything only they
    /// feed) as constants.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<NodeId> {
        self.tensors
            .iter()
            .map(|t| if requires_grad { tape.param(t.clone()) } else { tape.leaf(t.clone()) })
            .collect()
    }

    /// Densified gradients for previously bound parameters, in store order.
    pub fn collect_grads(&self, grads: &Grads<T>, ids: &[NodeId]) -> Vec<Tensor<T>> {
        assert_eq!(ids.len(), self.len(), "binding length vs store length");
        ids.iter()
            .zip(&self.tensors)
            .map(|(&id, t)| grads.dense(id, t.shape()))
            .collect()
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_of_elementwise_ops_differentiates() {
        // loss = sum((a*b - c)^2); da = 2(ab-c)b, db = 2(ab-c)a, dc = -2(ab-c)
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::from_vec(&[3], vec![1.0, 2.0, -1.0]));
        let b = tape.param(Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]));
        let c = tape.leaf(Tensor::from_vec(&[3], vec![0.0, 1.0, 0.5]));
        let ab = tape.mul(a, b);
        let r = tape.sub(ab, c);
        let sq = tape.mul(r, r);
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss);
        let rv = [0.5, -3.0, -2.5];
        let da = grads.get(a).unwrap();
        let db = grads.get(b).unwrap();
        for i in 0..3 {
            assert!((da.data()[i] - 2.0 * rv[i] * tape.value(b).data()[i]).abs() < 1e-12);
            assert!((db.data()[i] - 2.0 * rv[i] * tape.value(a).data()[i]).abs() < 1e-12);
        }
        assert!(grads.get(c).is_none(), "constants receive no gradient");
    }

    #[test]
    fn inference_tape_computes_but_cannot_backward() {
        let before = tapes_constructed();
        let mut tape = Tape::<f32>::inference();
        let a = tape.param(Tensor::from_vec(&[2], vec![1.0, 2.0]));
        let s = tape.sum_all(a);
        assert_eq!(tape.value(s).item(), 3.0);
        assert_eq!(tapes_constructed(), before, "inference tapes are not counted");
    }

    #[test]
    #[should_panic(expected = "backward on an inference tape")]
    fn backward_on_inference_tape_panics() {
        let mut tape = Tape::<f32>::inference();
        let a = tape.param(Tensor::scalar(1.0));
        tape.backward(a);
    }

    #[test]
    fn needs_grad_prunes_frozen_subgraphs() {
        let mut tape = Tape::<f64>::new();
        let frozen = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]));
        let live = tape.param(Tensor::from_vec(&[2], vec![3.0, 4.0]));
        let dead_branch = tape.sigmoid(frozen);
        let sum = tape.add(dead_branch, live);
        let loss = tape.sum_all(sum);
        let grads = tape.backward(loss);
        assert!(grads.get(dead_branch).is_none());
        assert!(grads.get(live).is_some());
    }

    #[test]
    fn reshape_and_crop_route_gradients() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let crop = tape.crop_spatial(a, 0, 1, 2, 1);
        assert_eq!(tape.value(crop).data(), &[2.0, 4.0]);
        let flat = tape.reshape(crop, &[2]);
        let loss = tape.sum_all(flat);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(a) + sum(a*a): da = 1 + 2a
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::from_vec(&[2], vec![3.0, -2.0]));
        let s1 = tape.sum_all(a);
        let sq = tape.mul(a, a);
        let s2 = tape.sum_all(sq);
        let loss = tape.add(s1, s2);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(a).unwrap().data(), &[7.0, -3.0]);
    }
}
