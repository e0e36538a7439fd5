//! Pure numeric kernels: forward and backward passes for every
//! differentiable operation, on flat slices. The tape dispatches into these;
//! inference reuses the same code without recording. Layout is row-major
//! `C x H x W` for images and `Cout x Cin x Kh x Kw` for conv weights.
//!
//! Backward kernels *accumulate* into their output gradient buffers; callers
//! zero-initialize. All loops run sequentially in a fixed order, so results
//! are bitwise reproducible for a given build.

use crate::fft;
use crate::scalar::{kahan_sum, Scalar};

/// Padding mode for `conv2d`. `ReflectSame` pads by `(k-1)/2` with edge
/// reflection (the border pixel itself is not repeated), which preserves the
/// spatial size at stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    Valid,
    ReflectSame,
}

/// Backend for the observation blur. `Auto` switches to FFT for kernels of
/// size [`FFT_MIN_KERNEL`] and up; the direct path is the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlurBackend {
    #[default]
    Auto,
    Direct,
    Fft,
}

/// Kernel side length at which `BlurBackend::Auto` switches to FFT.
pub const FFT_MIN_KERNEL: usize = 13;

impl BlurBackend {
    fn use_fft(self, k: usize) -> bool {
        match self {
            BlurBackend::Auto => k >= FFT_MIN_KERNEL,
            BlurBackend::Direct => false,
            BlurBackend::Fft => true,
        }
    }
}

/// Output spatial size of a valid convolution/correlation.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize) -> usize {
    assert!(input >= kernel, "conv input dim {input} smaller than kernel {kernel}");
    (input - kernel) / stride + 1
}

// ---------------------------------------------------------------------------
// conv2d (cross-correlation, the network primitive)
// ---------------------------------------------------------------------------

/// Valid cross-correlation. `inp` is `Cin x H x W`, `wgt` is
/// `Cout x Cin x Kh x Kw`, `out` is `Cout x Ho x Wo` and is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_valid_fwd<T: Scalar>(
    inp: &[T],
    (cin, h, w): (usize, usize, usize),
    wgt: &[T],
    (cout, kh, kw): (usize, usize, usize),
    stride: usize,
    out: &mut [T],
) {
    let ho = conv_out_dim(h, kh, stride);
    let wo = conv_out_dim(w, kw, stride);
    assert_eq!(inp.len(), cin * h * w, "conv input length");
    assert_eq!(wgt.len(), cout * cin * kh * kw, "conv weight length");
    assert_eq!(out.len(), cout * ho * wo, "conv output length");
    out.fill(T::zero());
    for co in 0..cout {
        let out_c = &mut out[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..cin {
            for a in 0..kh {
                for b in 0..kw {
                    let wv = wgt[((co * cin + ci) * kh + a) * kw + b];
                    for oh in 0..ho {
                        let in_base = (ci * h + oh * stride + a) * w + b;
                        let out_row = &mut out_c[oh * wo..(oh + 1) * wo];
                        if stride == 1 {
                            let in_row = &inp[in_base..in_base + wo];
                            for (o, &x) in out_row.iter_mut().zip(in_row) {
                                *o = *o + wv * x;
                            }
                        } else {
                            let in_row = &inp[in_base..in_base + (wo - 1) * stride + 1];
                            for (ow, o) in out_row.iter_mut().enumerate() {
                                *o = *o + wv * in_row[ow * stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of `conv2d_valid_fwd` w.r.t. the input; accumulates into `d_inp`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_valid_bwd_input<T: Scalar>(
    d_out: &[T],
    (cin, h, w): (usize, usize, usize),
    wgt: &[T],
    (cout, kh, kw): (usize, usize, usize),
    stride: usize,
    d_inp: &mut [T],
) {
    let ho = conv_out_dim(h, kh, stride);
    let wo = conv_out_dim(w, kw, stride);
    for co in 0..cout {
        let d_out_c = &d_out[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..cin {
            for a in 0..kh {
                for b in 0..kw {
                    let wv = wgt[((co * cin + ci) * kh + a) * kw + b];
                    for oh in 0..ho {
                        let in_base = (ci * h + oh * stride + a) * w + b;
                        let d_out_row = &d_out_c[oh * wo..(oh + 1) * wo];
                        if stride == 1 {
                            let d_in_row = &mut d_inp[in_base..in_base + wo];
                            for (di, &g) in d_in_row.iter_mut().zip(d_out_row) {
                                *di = *di + wv * g;
                            }
                        } else {
                            for (ow, &g) in d_out_row.iter().enumerate() {
                                d_inp[in_base + ow * stride] = d_inp[in_base + ow * stride] + wv * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of `conv2d_valid_fwd` w.r.t. the weight; accumulates into `d_wgt`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_valid_bwd_weight<T: Scalar>(
    d_out: &[T],
    inp: &[T],
    (cin, h, w): (usize, usize, usize),
    (cout, kh, kw): (usize, usize, usize),
    stride: usize,
    d_wgt: &mut [T],
) {
    let ho = conv_out_dim(h, kh, stride);
    let wo = conv_out_dim(w, kw, stride);
    for co in 0..cout {
        let d_out_c = &d_out[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..cin {
            for a in 0..kh {
                for b in 0..kw {
                    let mut acc = T::zero();
                    for oh in 0..ho {
                        let in_base = (ci * h + oh * stride + a) * w + b;
                        let d_out_row = &d_out_c[oh * wo..(oh + 1) * wo];
                        if stride == 1 {
                            let in_row = &inp[in_base..in_base + wo];
                            for (&g, &x) in d_out_row.iter().zip(in_row) {
                                acc = acc + g * x;
                            }
                        } else {
                            for (ow, &g) in d_out_row.iter().enumerate() {
                                acc = acc + g * inp[in_base + ow * stride];
                            }
                        }
                    }
                    let wi = ((co * cin + ci) * kh + a) * kw + b;
                    d_wgt[wi] = d_wgt[wi] + acc;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// reflection padding
// ---------------------------------------------------------------------------

fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
    debug_assert!((0..n).contains(&r), "reflect pad wider than input");
    r as usize
}

/// Edge-reflected padding by `pad` on every spatial side. Requires
/// `pad < min(h, w)` so a single reflection suffices.
pub fn reflect_pad_fwd<T: Scalar>(inp: &[T], (c, h, w): (usize, usize, usize), pad: usize) -> Vec<T> {
    assert!(pad < h && pad < w, "reflect pad {pad} too large for {h}x{w}");
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); c * hp * wp];
    for ci in 0..c {
        for i in 0..hp {
            let si = reflect_index(i as isize - pad as isize, h);
            let src = &inp[(ci * h + si) * w..(ci * h + si + 1) * w];
            let dst = &mut out[(ci * hp + i) * wp..(ci * hp + i + 1) * wp];
            for (j, d) in dst.iter_mut().enumerate() {
                let sj = reflect_index(j as isize - pad as isize, w);
                *d = src[sj];
            }
        }
    }
    out
}

/// Transpose of `reflect_pad_fwd`; accumulates into `d_inp`.
pub fn reflect_pad_bwd<T: Scalar>(
    d_padded: &[T],
    (c, h, w): (usize, usize, usize),
    pad: usize,
    d_inp: &mut [T],
) {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    for ci in 0..c {
        for i in 0..hp {
            let si = reflect_index(i as isize - pad as isize, h);
            for j in 0..wp {
                let sj = reflect_index(j as isize - pad as isize, w);
                let di = (ci * h + si) * w + sj;
                d_inp[di] = d_inp[di] + d_padded[(ci * hp + i) * wp + j];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// bilinear 2x upsampling
// ---------------------------------------------------------------------------

/// Per-output-index source taps for 2x upsampling with half-pixel centers:
/// output `i` samples input at `(i + 0.5)/2 - 0.5`, clamped to the edges.
fn upsample_taps<T: Scalar>(n_out: usize, n_in: usize) -> Vec<(usize, usize, T, T)> {
    (0..n_out)
        .map(|i| {
            let src = (i as f64 + 0.5) / 2.0 - 0.5;
            let i0 = src.floor();
            let frac = src - i0;
            let clamp = |x: f64| (x.max(0.0) as usize).min(n_in - 1);
            (clamp(i0), clamp(i0 + 1.0), T::of_f64(1.0 - frac), T::of_f64(frac))
        })
        .collect()
}

/// Bilinear 2x upsampling: `C x H x W` -> `C x 2H x 2W`. Overwrites `out`.
pub fn upsample2x_fwd<T: Scalar>(inp: &[T], (c, h, w): (usize, usize, usize), out: &mut [T]) {
    let (h2, w2) = (2 * h, 2 * w);
    assert_eq!(out.len(), c * h2 * w2, "upsample output length");
    let rows = upsample_taps::<T>(h2, h);
    let cols = upsample_taps::<T>(w2, w);
    for ci in 0..c {
        for (i, &(r0, r1, wr0, wr1)) in rows.iter().enumerate() {
            let src0 = &inp[(ci * h + r0) * w..(ci * h + r0 + 1) * w];
            let src1 = &inp[(ci * h + r1) * w..(ci * h + r1 + 1) * w];
            let dst = &mut out[(ci * h2 + i) * w2..(ci * h2 + i + 1) * w2];
            for (j, d) in dst.iter_mut().enumerate() {
                let (c0, c1, wc0, wc1) = cols[j];
                let top = wc0 * src0[c0] + wc1 * src0[c1];
                let bot = wc0 * src1[c0] + wc1 * src1[c1];
                *d = wr0 * top + wr1 * bot;
            }
        }
    }
}

/// Transpose of `upsample2x_fwd`; accumulates into `d_inp`.
pub fn upsample2x_bwd<T: Scalar>(d_out: &[T], (c, h, w): (usize, usize, usize), d_inp: &mut [T]) {
    let (h2, w2) = (2 * h, 2 * w);
    let rows = upsample_taps::<T>(h2, h);
    let cols = upsample_taps::<T>(w2, w);
    for ci in 0..c {
        for (i, &(r0, r1, wr0, wr1)) in rows.iter().enumerate() {
            let g_row = &d_out[(ci * h2 + i) * w2..(ci * h2 + i + 1) * w2];
            for (j, &g) in g_row.iter().enumerate() {
                let (c0, c1, wc0, wc1) = cols[j];
                d_inp[(ci * h + r0) * w + c0] = d_inp[(ci * h + r0) * w + c0] + wr0 * wc0 * g;
                d_inp[(ci * h + r0) * w + c1] = d_inp[(ci * h + r0) * w + c1] + wr0 * wc1 * g;
                d_inp[(ci * h + r1) * w + c0] = d_inp[(ci * h + r1) * w + c0] + wr1 * wc0 * g;
                d_inp[(ci * h + r1) * w + c1] = d_inp[(ci * h + r1) * w + c1] + wr1 * wc1 * g;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// channel normalization
// ---------------------------------------------------------------------------

fn channel_stats<T: Scalar>(x: &[T], eps: T) -> (T, T) {
    let n = T::of_f64(x.len() as f64);
    let mu = kahan_sum(x.iter().copied()) / n;
    let var = kahan_sum(x.iter().map(|&v| (v - mu) * (v - mu))) / n;
    (mu, T::one() / (var + eps).sqrt())
}

/// Per-channel spatial standardization with learned gain and shift:
/// `out = gain[c] * (x - mean_c) / sqrt(var_c + eps) + shift[c]`.
pub fn channel_norm_fwd<T: Scalar>(
    inp: &[T],
    (c, h, w): (usize, usize, usize),
    gain: &[T],
    shift: &[T],
    eps: T,
    out: &mut [T],
) {
    assert_eq!(gain.len(), c, "channel_norm gain length");
    assert_eq!(shift.len(), c, "channel_norm shift length");
    let hw = h * w;
    for ci in 0..c {
        let x = &inp[ci * hw..(ci + 1) * hw];
        let (mu, inv) = channel_stats(x, eps);
        let (g, s) = (gain[ci], shift[ci]);
        for (o, &v) in out[ci * hw..(ci + 1) * hw].iter_mut().zip(x) {
            *o = g * (v - mu) * inv + s;
        }
    }
}

/// Gradients of `channel_norm_fwd`; accumulates into all three buffers.
#[allow(clippy::too_many_arguments)]
pub fn channel_norm_bwd<T: Scalar>(
    d_out: &[T],
    inp: &[T],
    (c, h, w): (usize, usize, usize),
    gain: &[T],
    eps: T,
    d_inp: &mut [T],
    d_gain: &mut [T],
    d_shift: &mut [T],
) {
    let hw = h * w;
    let n = T::of_f64(hw as f64);
    for ci in 0..c {
        let x = &inp[ci * hw..(ci + 1) * hw];
        let g_out = &d_out[ci * hw..(ci + 1) * hw];
        let (mu, inv) = channel_stats(x, eps);
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for (&g, &v) in g_out.iter().zip(x) {
            let xhat = (v - mu) * inv;
            sum_g = sum_g + g;
            sum_gx = sum_gx + g * xhat;
        }
        d_gain[ci] = d_gain[ci] + sum_gx;
        d_shift[ci] = d_shift[ci] + sum_g;
        let (mean_g, mean_gx) = (sum_g / n, sum_gx / n);
        let scale = gain[ci] * inv;
        for ((di, &g), &v) in d_inp[ci * hw..(ci + 1) * hw].iter_mut().zip(g_out).zip(x) {
            let xhat = (v - mu) * inv;
            *di = *di + scale * (g - mean_g - xhat * mean_gx);
        }
    }
}

// ---------------------------------------------------------------------------
// pointwise activations
// ---------------------------------------------------------------------------

pub fn leaky_relu_fwd<T: Scalar>(inp: &[T], slope: T, out: &mut [T]) {
    for (o, &x) in out.iter_mut().zip(inp) {
        *o = if x >= T::zero() { x } else { slope * x };
    }
}

pub fn leaky_relu_bwd<T: Scalar>(d_out: &[T], inp: &[T], slope: T, d_inp: &mut [T]) {
    for ((di, &g), &x) in d_inp.iter_mut().zip(d_out).zip(inp) {
        *di = *di + if x >= T::zero() { g } else { slope * g };
    }
}

pub fn sigmoid_fwd<T: Scalar>(inp: &[T], out: &mut [T]) {
    for (o, &x) in out.iter_mut().zip(inp) {
        *o = if x >= T::zero() {
            T::one() / (T::one() + (-x).exp())
        } else {
            let e = x.exp();
            e / (T::one() + e)
        };
    }
}

/// Sigmoid gradient, expressed through the forward *output* `s(1 - s)`.
pub fn sigmoid_bwd<T: Scalar>(d_out: &[T], out: &[T], d_inp: &mut [T]) {
    for ((di, &g), &s) in d_inp.iter_mut().zip(d_out).zip(out) {
        *di = *di + g * s * (T::one() - s);
    }
}

/// Numerically stable softmax over a flat vector. The normalizer uses
/// compensated summation so the outputs sum to 1 within a few ulps even in
/// `f32` and for thousands of entries.
pub fn softmax_fwd<T: Scalar>(inp: &[T], out: &mut [T]) {
    let max = inp.iter().copied().fold(T::neg_infinity(), T::max);
    for (o, &x) in out.iter_mut().zip(inp) {
        *o = (x - max).exp();
    }
    let denom = kahan_sum(out.iter().copied());
    for o in out.iter_mut() {
        *o = *o / denom;
    }
}

pub fn softmax_bwd<T: Scalar>(d_out: &[T], out: &[T], d_inp: &mut [T]) {
    let dot = kahan_sum(d_out.iter().zip(out).map(|(&g, &s)| g * s));
    for ((di, &g), &s) in d_inp.iter_mut().zip(d_out).zip(out) {
        *di = *di + s * (g - dot);
    }
}

// ---------------------------------------------------------------------------
// fully connected layer
// ---------------------------------------------------------------------------

/// `out = W x + b` with `W: M x N`, `b: M`, `x: N`. Overwrites `out`.
pub fn linear_fwd<T: Scalar>(wgt: &[T], bias: &[T], inp: &[T], (m, n): (usize, usize), out: &mut [T]) {
    assert_eq!(wgt.len(), m * n, "linear weight length");
    assert_eq!(inp.len(), n, "linear input length {} vs {}", inp.len(), n);
    for (i, o) in out.iter_mut().enumerate() {
        let row = &wgt[i * n..(i + 1) * n];
        let mut acc = T::zero();
        for (&wv, &x) in row.iter().zip(inp) {
            acc = acc + wv * x;
        }
        *o = acc + bias[i];
    }
}

#[allow(clippy::too_many_arguments)]
pub fn linear_bwd<T: Scalar>(
    d_out: &[T],
    wgt: &[T],
    inp: &[T],
    (m, n): (usize, usize),
    d_wgt: &mut [T],
    d_bias: &mut [T],
    d_inp: &mut [T],
) {
    for i in 0..m {
        let g = d_out[i];
        d_bias[i] = d_bias[i] + g;
        let row = &wgt[i * n..(i + 1) * n];
        let d_row = &mut d_wgt[i * n..(i + 1) * n];
        for ((dw, di), (&wv, &x)) in d_row.iter_mut().zip(d_inp.iter_mut()).zip(row.iter().zip(inp)) {
            *dw = *dw + g * x;
            *di = *di + g * wv;
        }
    }
}

// ---------------------------------------------------------------------------
// observation blur (true convolution, valid region)
// ---------------------------------------------------------------------------

/// True (kernel-flipping) convolution restricted to the valid region:
/// `y(c,i,j) = sum_{a,b} k(a,b) x(c, i+K-1-a, j+K-1-b)`, so the output is
/// `C x (Hx-K+1) x (Wx-K+1)`. This is the observation model: the network
/// primitive above correlates, the physical blur convolves. Overwrites `out`.
pub fn blur_valid_fwd<T: Scalar>(
    x: &[T],
    (c, hx, wx): (usize, usize, usize),
    k: &[T],
    kk: usize,
    backend: BlurBackend,
    out: &mut [T],
) {
    let h = conv_out_dim(hx, kk, 1);
    let w = conv_out_dim(wx, kk, 1);
    assert_eq!(k.len(), kk * kk, "blur kernel length");
    assert_eq!(out.len(), c * h * w, "blur output length");
    if backend.use_fft(kk) {
        for ci in 0..c {
            let y = fft::valid_true_conv(&x[ci * hx * wx..(ci + 1) * hx * wx], (hx, wx), k, kk);
            out[ci * h * w..(ci + 1) * h * w].copy_from_slice(&y);
        }
        return;
    }
    out.fill(T::zero());
    for ci in 0..c {
        let out_c = &mut out[ci * h * w..(ci + 1) * h * w];
        for a in 0..kk {
            for b in 0..kk {
                let wv = k[a * kk + b];
                let (fa, fb) = (kk - 1 - a, kk - 1 - b);
                for i in 0..h {
                    let x_row = &x[(ci * hx + i + fa) * wx + fb..][..w];
                    let out_row = &mut out_c[i * w..(i + 1) * w];
                    for (o, &xv) in out_row.iter_mut().zip(x_row) {
                        *o = *o + wv * xv;
                    }
                }
            }
        }
    }
}

/// Gradient of `blur_valid_fwd` w.r.t. the image; accumulates into `d_x`.
pub fn blur_valid_bwd_input<T: Scalar>(
    d_out: &[T],
    (c, hx, wx): (usize, usize, usize),
    k: &[T],
    kk: usize,
    backend: BlurBackend,
    d_x: &mut [T],
) {
    let h = conv_out_dim(hx, kk, 1);
    let w = conv_out_dim(wx, kk, 1);
    if backend.use_fft(kk) {
        for ci in 0..c {
            let dx = fft::full_true_corr(&d_out[ci * h * w..(ci + 1) * h * w], (h, w), k, kk);
            for (d, g) in d_x[ci * hx * wx..(ci + 1) * hx * wx].iter_mut().zip(dx) {
                *d = *d + g;
            }
        }
        return;
    }
    for ci in 0..c {
        let d_out_c = &d_out[ci * h * w..(ci + 1) * h * w];
        for a in 0..kk {
            for b in 0..kk {
                let wv = k[a * kk + b];
                let (fa, fb) = (kk - 1 - a, kk - 1 - b);
                for i in 0..h {
                    let dx_row = &mut d_x[(ci * hx + i + fa) * wx + fb..][..w];
                    let g_row = &d_out_c[i * w..(i + 1) * w];
                    for (d, &g) in dx_row.iter_mut().zip(g_row) {
                        *d = *d + wv * g;
                    }
                }
            }
        }
    }
}

/// Gradient of `blur_valid_fwd` w.r.t. the kernel; accumulates into `d_k`.
pub fn blur_valid_bwd_kernel<T: Scalar>(
    d_out: &[T],
    x: &[T],
    (c, hx, wx): (usize, usize, usize),
    kk: usize,
    backend: BlurBackend,
    d_k: &mut [T],
) {
    let h = conv_out_dim(hx, kk, 1);
    let w = conv_out_dim(wx, kk, 1);
    if backend.use_fft(kk) {
        for ci in 0..c {
            let corr = fft::valid_corr(
                &x[ci * hx * wx..(ci + 1) * hx * wx],
                (hx, wx),
                &d_out[ci * h * w..(ci + 1) * h * w],
                (h, w),
            );
            // corr has size K x K; tap (a,b) of the kernel saw x shifted by
            // (K-1-a, K-1-b).
            for a in 0..kk {
                for b in 0..kk {
                    let v = corr[(kk - 1 - a) * kk + (kk - 1 - b)];
                    d_k[a * kk + b] = d_k[a * kk + b] + v;
                }
            }
        }
        return;
    }
    for ci in 0..c {
        let d_out_c = &d_out[ci * h * w..(ci + 1) * h * w];
        for a in 0..kk {
            for b in 0..kk {
                let (fa, fb) = (kk - 1 - a, kk - 1 - b);
                let mut acc = T::zero();
                for i in 0..h {
                    let x_row = &x[(ci * hx + i + fa) * wx + fb..][..w];
                    let g_row = &d_out_c[i * w..(i + 1) * w];
                    for (&xv, &g) in x_row.iter().zip(g_row) {
                        acc = acc + xv * g;
                    }
                }
                d_k[a * kk + b] = d_k[a * kk + b] + acc;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// smoothed isotropic total variation
// ---------------------------------------------------------------------------

/// Smoothed isotropic TV with forward differences:
/// `sum_c sum_{i,j} sqrt(dh^2 + dv^2 + eps^2)` where `dh`/`dv` are the
/// horizontal/vertical forward differences. The sum ranges over
/// `max(H-1,1) x max(W-1,1)` positions per channel, so a degenerate
/// dimension contributes a zero difference instead of emptying the sum.
/// Differentiable everywhere for `eps > 0`; `eps = 0` is accepted for
/// forward-only reference use.
pub fn tv_fwd<T: Scalar>(x: &[T], (c, h, w): (usize, usize, usize), eps: T) -> T {
    let (rh, rw) = (h.saturating_sub(1).max(1), w.saturating_sub(1).max(1));
    let e2 = eps * eps;
    let mut terms = Vec::with_capacity(c * rh * rw);
    for ci in 0..c {
        for i in 0..rh {
            for j in 0..rw {
                let at = |r: usize, s: usize| x[(ci * h + r) * w + s];
                let dh = if j + 1 < w { at(i, j + 1) - at(i, j) } else { T::zero() };
                let dv = if i + 1 < h { at(i + 1, j) - at(i, j) } else { T::zero() };
                terms.push((dh * dh + dv * dv + e2).sqrt());
            }
        }
    }
    kahan_sum(terms)
}

/// Gradient of `tv_fwd` (scaled by the scalar upstream gradient `g`);
/// accumulates into `d_x`. Requires `eps > 0`.
pub fn tv_bwd<T: Scalar>(d_loss: T, x: &[T], (c, h, w): (usize, usize, usize), eps: T, d_x: &mut [T]) {
    assert!(eps > T::zero(), "tv gradient needs eps > 0");
    let (rh, rw) = (h.saturating_sub(1).max(1), w.saturating_sub(1).max(1));
    let e2 = eps * eps;
    for ci in 0..c {
        for i in 0..rh {
            for j in 0..rw {
                let idx = |r: usize, s: usize| (ci * h + r) * w + s;
                let dh = if j + 1 < w { x[idx(i, j + 1)] - x[idx(i, j)] } else { T::zero() };
                let dv = if i + 1 < h { x[idx(i + 1, j)] - x[idx(i, j)] } else { T::zero() };
                let t = (dh * dh + dv * dv + e2).sqrt();
                let (gh, gv) = (d_loss * dh / t, d_loss * dv / t);
                if j + 1 < w {
                    d_x[idx(i, j + 1)] = d_x[idx(i, j + 1)] + gh;
                    d_x[idx(i, j)] = d_x[idx(i, j)] - gh;
                }
                if i + 1 < h {
                    d_x[idx(i + 1, j)] = d_x[idx(i + 1, j)] + gv;
                    d_x[idx(i, j)] = d_x[idx(i, j)] - gv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_hand_example() {
        // 3x3 ramp correlated with a 2x2 identity-diagonal kernel.
        let inp: Vec<f64> = (1..=9).map(f64::from).collect();
        let wgt = vec![1.0, 0.0, 0.0, 1.0];
        let mut out = vec![0.0; 4];
        conv2d_valid_fwd(&inp, (1, 3, 3), &wgt, (1, 2, 2), 1, &mut out);
        assert_eq!(out, vec![6.0, 8.0, 12.0, 14.0]);
    }

    #[test]
    fn conv_stride_two_picks_alternate_windows() {
        let inp: Vec<f64> = (0..16).map(f64::from).collect();
        let wgt = vec![1.0];
        let mut out = vec![0.0; 4];
        conv2d_valid_fwd(&inp, (1, 4, 4), &wgt, (1, 1, 1), 2, &mut out);
        assert_eq!(out, vec![0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn reflect_pad_mirrors_without_repeating_edge() {
        let inp = vec![1.0f64, 2.0, 3.0];
        let out = reflect_pad_fwd(&inp, (1, 1, 3), 0);
        assert_eq!(out, inp);
        let inp = vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let out = reflect_pad_fwd(&inp, (1, 3, 3), 1);
        let expect = vec![
            5.0, 4.0, 5.0, 6.0, 5.0, //
            2.0, 1.0, 2.0, 3.0, 2.0, //
            5.0, 4.0, 5.0, 6.0, 5.0, //
            8.0, 7.0, 8.0, 9.0, 8.0, //
            5.0, 4.0, 5.0, 6.0, 5.0,
        ];
        assert_eq!(out, expect);
    }

    #[test]
    fn upsample_matches_hand_example() {
        let inp = vec![0.0f64, 1.0];
        let mut out = vec![0.0; 8];
        upsample2x_fwd(&inp, (1, 1, 2), &mut out);
        // Row doubling duplicates the single row; columns interpolate.
        assert_eq!(&out[0..4], &[0.0, 0.25, 0.75, 1.0]);
        assert_eq!(&out[4..8], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn linear_matches_hand_example() {
        let wgt = vec![1.0f64, 1.0, 1.0, -1.0];
        let bias = vec![0.0, 1.0];
        let inp = vec![1.0, 2.0];
        let mut out = vec![0.0; 2];
        linear_fwd(&wgt, &bias, &inp, (2, 2), &mut out);
        assert_eq!(out, vec![3.0, 0.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let inp = vec![0.0f64; 9];
        let mut out = vec![0.0; 9];
        softmax_fwd(&inp, &mut out);
        for &v in &out {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized_in_f32() {
        let inp: Vec<f32> = (0..729).map(|i| ((i * 37 % 100) as f32) * 0.05 - 2.0).collect();
        let shifted: Vec<f32> = inp.iter().map(|&x| x + 3.5).collect();
        let mut a = vec![0.0f32; inp.len()];
        let mut b = vec![0.0f32; inp.len()];
        softmax_fwd(&inp, &mut a);
        softmax_fwd(&shifted, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
        let sum: f64 = kahan_sum(a.iter().map(|&v| v as f64));
        assert!((sum - 1.0).abs() < 1e-6, "softmax sum {sum}");
    }

    #[test]
    fn channel_norm_standardizes_two_pixels() {
        let inp = vec![-1.0f64, 1.0];
        let mut out = vec![0.0; 2];
        channel_norm_fwd(&inp, (1, 1, 2), &[1.0], &[0.0], 1e-12, &mut out);
        assert!((out[0] + 1.0).abs() < 1e-6);
        assert!((out[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn blur_with_centered_delta_is_central_crop() {
        let x: Vec<f64> = (0..49).map(f64::from).collect();
        let mut k = vec![0.0; 9];
        k[4] = 1.0; // center of a 3x3 kernel
        let mut out = vec![0.0; 25];
        blur_valid_fwd(&x, (1, 7, 7), &k, 3, BlurBackend::Direct, &mut out);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(out[i * 5 + j], x[(i + 1) * 7 + (j + 1)]);
            }
        }
    }

    #[test]
    fn blur_flips_the_kernel() {
        // Kernel with mass at (0,0): true convolution shifts the image the
        // opposite way from correlation.
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let mut k = vec![0.0; 4];
        k[0] = 1.0;
        let mut out = vec![0.0; 9];
        blur_valid_fwd(&x, (1, 4, 4), &k, 2, BlurBackend::Direct, &mut out);
        // y(i,j) = x(i + 1 - 0, j + 1 - 0)
        assert_eq!(out[0], x[1 * 4 + 1]);
        assert_eq!(out[8], x[3 * 4 + 3]);
    }

    #[test]
    fn blur_of_constant_image_with_simplex_kernel_is_constant() {
        let x = vec![0.37f64; 8 * 8];
        let k = vec![1.0 / 9.0; 9];
        let mut out = vec![0.0; 36];
        blur_valid_fwd(&x, (1, 8, 8), &k, 3, BlurBackend::Direct, &mut out);
        for &v in &out {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_of_constant_image_is_eps_per_cell() {
        let x = vec![0.5f64; 16];
        let tv = tv_fwd(&x, (1, 4, 4), 1e-6);
        assert!((tv - 9.0e-6).abs() < 1e-18, "tv {tv}");
    }

    #[test]
    fn tv_of_single_step_counts_once() {
        let x = vec![0.0f64, 1.0];
        assert_eq!(tv_fwd(&x, (1, 1, 2), 0.0), 1.0);
        let tv = tv_fwd(&x, (1, 1, 2), 1e-6);
        assert!((tv - (1.0f64 + 1e-12).sqrt()).abs() < 1e-18);
    }

    #[test]
    fn leaky_relu_and_sigmoid_behave_at_extremes() {
        let inp = vec![-2.0f64, 0.0, 3.0];
        let mut out = vec![0.0; 3];
        leaky_relu_fwd(&inp, 0.2, &mut out);
        assert_eq!(out, vec![-0.4, 0.0, 3.0]);
        let inp = vec![-500.0f64, 0.0, 500.0];
        sigmoid_fwd(&inp, &mut out);
        assert!(out[0] >= 0.0 && out[0] < 1e-100);
        assert_eq!(out[1], 0.5);
        assert!(out[2] <= 1.0 && out[2] > 0.999_999);
    }
}
