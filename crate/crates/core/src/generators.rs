//! The two untrained generators. `Gx` maps a fixed noise image to the sharp
//! image estimate through a skip-connected encoder–decoder ending in a
//! sigmoid, so outputs live in `(0, 1)`. `Gk` maps a fixed noise vector to
//! the blur kernel through a small fully connected net ending in a softmax,
//! so the kernel is non-negative and sums to one by construction rather
//! than by projection.
//!
//! Parameters live in a [`ParamStore`]; registration order doubles as the
//! seeded initialization draw order, so a (config, seed) pair pins every
//! weight bit-for-bit.

use rand_chacha::ChaCha8Rng;

use crate::kernels::Pad;
use crate::rng::{self, stream};
use crate::scalar::{kahan_sum, Scalar};
use crate::tape::{NodeId, ParamStore, Tape};
use crate::tensor::Tensor;

/// Negative slope of every LeakyReLU in both networks.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Variance guard in channel normalization.
pub const CHANNEL_NORM_EPS: f64 = 1e-5;
/// Noise inputs are uniform in `[0, Z_RANGE)`.
pub const Z_RANGE: f64 = 0.1;
/// Std of the per-iteration perturbation added to `z_x` during optimization.
pub const PERTURB_STD: f64 = 1e-3;

// ---------------------------------------------------------------------------
// kernel generator
// ---------------------------------------------------------------------------

/// Depth variants of the kernel generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkDepth {
    NoHidden,
    OneHidden,
    TwoHidden,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GkConfig {
    pub z_dim: usize,
    pub hidden: Vec<usize>,
    pub kernel_size: usize,
}

impl GkConfig {
    /// Default: 200-dim input, one hidden layer of 1000 units.
    pub fn new(kernel_size: usize) -> Self {
        Self::with_depth(kernel_size, GkDepth::OneHidden)
    }

    pub fn with_depth(kernel_size: usize, depth: GkDepth) -> Self {
        assert!(kernel_size % 2 == 1 && kernel_size >= 1, "kernel size must be odd, got {kernel_size}");
        let hidden = match depth {
            GkDepth::NoHidden => vec![],
            GkDepth::OneHidden => vec![1000],
            GkDepth::TwoHidden => vec![1000, 1000],
        };
        GkConfig { z_dim: 200, hidden, kernel_size }
    }

    /// Layer dimensions as (rows, cols) of each weight matrix.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let k2 = self.kernel_size * self.kernel_size;
        let widths: Vec<usize> =
            std::iter::once(self.z_dim).chain(self.hidden.iter().copied()).chain(std::iter::once(k2)).collect();
        widths.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

/// Kernel generator: fully connected layers with LeakyReLU between them and
/// a terminal softmax reshaped to `K x K`.
pub struct Gk {
    pub cfg: GkConfig,
}

/// Build the kernel generator and its freshly initialized parameters.
/// Weights and biases are uniform in `[-b, b]` with `b = sqrt(1/fan_in)`,
/// drawn in registration order from the kernel-parameter stream of `seed`.
pub fn build_gk<T: Scalar>(cfg: &GkConfig, seed: u64) -> (Gk, ParamStore<T>) {
    let mut rng = rng::stream_rng(seed, stream::GK_PARAMS);
    let mut store = ParamStore::new();
    for (l, (m, n)) in cfg.layer_dims().into_iter().enumerate() {
        let b = (1.0 / n as f64).sqrt();
        store.push(format!("gk.l{l}.weight"), rng::uniform_tensor(&mut rng, &[m, n], -b, b));
        store.push(format!("gk.l{l}.bias"), rng::uniform_tensor(&mut rng, &[m], -b, b));
    }
    (Gk { cfg: cfg.clone() }, store)
}

impl Gk {
    /// Number of tensors the forward pass expects to be bound.
    pub fn param_count(&self) -> usize {
        self.cfg.layer_dims().len() * 2
    }

    /// Forward pass over bound parameter nodes; returns the `K x K` kernel.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ids: &[NodeId], z: NodeId) -> NodeId {
        assert_eq!(ids.len(), self.param_count(), "gk binding length");
        assert_eq!(tape.value(z).numel(), self.cfg.z_dim, "gk input length");
        let slope = T::of_f64(LEAKY_SLOPE);
        let layers = self.cfg.layer_dims().len();
        let mut h = z;
        for l in 0..layers {
            h = tape.linear(ids[2 * l], ids[2 * l + 1], h);
            if l + 1 < layers {
                h = tape.leaky_relu(h, slope);
            }
        }
        let sm = tape.softmax(h);
        let k = self.cfg.kernel_size;
        tape.reshape(sm, &[k, k])
    }

    /// Forward pass without gradient bookkeeping.
    pub fn infer<T: Scalar>(&self, params: &ParamStore<T>, z: &Tensor<T>) -> Tensor<T> {
        let mut tape = Tape::inference();
        let ids = params.bind(&mut tape, false);
        let zid = tape.leaf(z.clone());
        let out = self.forward(&mut tape, &ids, zid);
        tape.value(out).clone()
    }
}

/// Smallest entry and |sum - 1| of a kernel, both in `f64`. The sum uses
/// compensated summation so the measurement itself does not dominate the
/// tolerance in single precision.
pub fn simplex_error<T: Scalar>(kernel: &Tensor<T>) -> (f64, f64) {
    let min = kernel.data().iter().fold(f64::INFINITY, |m, &x| m.min(x.as_f64()));
    let sum = kahan_sum(kernel.data().iter().map(|&x| x.as_f64()));
    (min, (sum - 1.0).abs())
}

// ---------------------------------------------------------------------------
// image generator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GxConfig {
    pub levels: usize,
    pub ch_down: Vec<usize>,
    pub ch_up: Vec<usize>,
    pub ch_skip: Vec<usize>,
    pub z_channels: usize,
    pub out_channels: usize,
    pub conv_kernel: usize,
}

impl GxConfig {
    /// Full-scale architecture: five levels, 128 channels, 16-channel skips.
    pub fn full(out_channels: usize) -> Self {
        GxConfig {
            levels: 5,
            ch_down: vec![128; 5],
            ch_up: vec![128; 5],
            ch_skip: vec![16; 5],
            z_channels: 8,
            out_channels,
            conv_kernel: 3,
        }
    }

    /// Reduced architecture for fast CPU runs: three levels, 16 channels,
    /// 4-channel skips.
    pub fn desk(out_channels: usize) -> Self {
        GxConfig {
            levels: 3,
            ch_down: vec![16; 3],
            ch_up: vec![16; 3],
            ch_skip: vec![4; 3],
            z_channels: 8,
            out_channels,
            conv_kernel: 3,
        }
    }

    fn validate(&self) {
        assert!(self.levels >= 1, "gx needs at least one level");
        assert_eq!(self.ch_down.len(), self.levels, "ch_down length vs levels");
        assert_eq!(self.ch_up.len(), self.levels, "ch_up length vs levels");
        assert_eq!(self.ch_skip.len(), self.levels, "ch_skip length vs levels");
        assert!(self.conv_kernel % 2 == 1, "conv kernel must be odd");
        assert!(self.z_channels >= 1 && self.out_channels >= 1, "channel counts must be positive");
    }

    /// Input channels of encoder level `i` (also the skip branch input).
    fn enc_in(&self, i: usize) -> usize {
        if i == 0 {
            self.z_channels
        } else {
            self.ch_down[i - 1]
        }
    }

    /// Channels arriving at decoder level `i` from below, pre-concat.
    fn below_ch(&self, i: usize) -> usize {
        if i + 1 == self.levels {
            self.ch_down[self.levels - 1]
        } else {
            self.ch_up[i + 1]
        }
    }
}

/// Image generator: encoder–decoder with per-level skip branches, bilinear
/// upsampling, channel normalization, and a sigmoid head. The latent canvas
/// is the requested output size rounded up to a multiple of `2^levels`; the
/// head output is center-cropped back.
pub struct Gx {
    pub cfg: GxConfig,
    out_h: usize,
    out_w: usize,
    z_h: usize,
    z_w: usize,
}

/// Build the image generator for a target output size. Initialization
/// follows the same rule as `build_gk` (uniform `[-b, b]`, `b =
/// sqrt(1/fan_in)`), from the image-parameter stream of `seed`;
/// normalization gains start at one and shifts at zero.
pub fn build_gx<T: Scalar>(cfg: &GxConfig, (out_h, out_w): (usize, usize), seed: u64) -> (Gx, ParamStore<T>) {
    cfg.validate();
    let unit = 1usize << cfg.levels;
    let z_h = out_h.div_ceil(unit) * unit;
    let z_w = out_w.div_ceil(unit) * unit;
    assert!(
        z_h / unit >= 2 && z_w / unit >= 2,
        "output {out_h}x{out_w} too small for {} levels",
        cfg.levels
    );
    let mut rng = rng::stream_rng(seed, stream::GX_PARAMS);
    let mut store = ParamStore::new();
    let conv = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, cout: usize, cin: usize, k: usize| {
        let b = (1.0 / (cin * k * k) as f64).sqrt();
        store.push(format!("{name}.weight"), rng::uniform_tensor(rng, &[cout, cin, k, k], -b, b));
        store.push(format!("{name}.bias"), rng::uniform_tensor(rng, &[cout], -b, b));
    };
    let norm = |store: &mut ParamStore<T>, name: &str, c: usize| {
        store.push(format!("{name}.gain"), Tensor::filled(&[c], T::one()));
        store.push(format!("{name}.shift"), Tensor::zeros(&[c]));
    };
    let k = cfg.conv_kernel;
    for i in 0..cfg.levels {
        let cin = cfg.enc_in(i);
        let cd = cfg.ch_down[i];
        conv(&mut store, &mut rng, &format!("gx.enc{i}.down"), cd, cin, k);
        norm(&mut store, &format!("gx.enc{i}.down.norm"), cd);
        conv(&mut store, &mut rng, &format!("gx.enc{i}.conv"), cd, cd, k);
        norm(&mut store, &format!("gx.enc{i}.norm"), cd);
        conv(&mut store, &mut rng, &format!("gx.skip{i}"), cfg.ch_skip[i], cin, 1);
        norm(&mut store, &format!("gx.skip{i}.norm"), cfg.ch_skip[i]);
    }
    for i in (0..cfg.levels).rev() {
        let cat = cfg.ch_skip[i] + cfg.below_ch(i);
        let cu = cfg.ch_up[i];
        norm(&mut store, &format!("gx.dec{i}.prenorm"), cat);
        conv(&mut store, &mut rng, &format!("gx.dec{i}.conv"), cu, cat, k);
        norm(&mut store, &format!("gx.dec{i}.norm"), cu);
        conv(&mut store, &mut rng, &format!("gx.dec{i}.conv1x1"), cu, cu, 1);
        norm(&mut store, &format!("gx.dec{i}.norm1x1"), cu);
    }
    conv(&mut store, &mut rng, "gx.head", cfg.out_channels, cfg.ch_up[0], 1);
    (Gx { cfg: cfg.clone(), out_h, out_w, z_h, z_w }, store)
}

/// Bound parameter ids for one conv + norm block.
#[derive(Clone, Copy)]
struct ConvNormIds {
    w: NodeId,
    b: NodeId,
    g: NodeId,
    s: NodeId,
}

struct GxIds {
    enc_down: Vec<ConvNormIds>,
    enc_conv: Vec<ConvNormIds>,
    skip: Vec<ConvNormIds>,
    dec_pre: Vec<(NodeId, NodeId)>, // indexed by level, gain/shift of concat norm
    dec_conv: Vec<ConvNormIds>,
    dec_one: Vec<ConvNormIds>,
    head_w: NodeId,
    head_b: NodeId,
}

impl Gx {
    /// Spatial size of the latent canvas (multiple of `2^levels`).
    pub fn z_shape(&self) -> Vec<usize> {
        vec![self.cfg.z_channels, self.z_h, self.z_w]
    }

    pub fn out_shape(&self) -> (usize, usize, usize) {
        (self.cfg.out_channels, self.out_h, self.out_w)
    }

    pub fn param_count(&self) -> usize {
        // 3 conv+norm blocks per encoder level, 1 prenorm + 2 blocks per
        // decoder level, plus the head conv.
        self.cfg.levels * 3 * 4 + self.cfg.levels * (2 + 2 * 4) + 2
    }

    /// Split the flat binding into named groups, mirroring `build_gx` order.
    fn group_ids(&self, ids: &[NodeId]) -> GxIds {
        assert_eq!(ids.len(), self.param_count(), "gx binding length");
        struct Cursor<'a> {
            ids: &'a [NodeId],
            pos: usize,
        }
        impl Cursor<'_> {
            fn take(&mut self) -> NodeId {
                self.pos += 1;
                self.ids[self.pos - 1]
            }
            fn block(&mut self) -> ConvNormIds {
                ConvNormIds { w: self.take(), b: self.take(), g: self.take(), s: self.take() }
            }
        }
        let mut cur = Cursor { ids, pos: 0 };
        let levels = self.cfg.levels;
        let mut enc_down = Vec::new();
        let mut enc_conv = Vec::new();
        let mut skip = Vec::new();
        for _ in 0..levels {
            enc_down.push(cur.block());
            enc_conv.push(cur.block());
            skip.push(cur.block());
        }
        let mut dec_pre = vec![(0, 0); levels];
        let mut dec_conv: Vec<Option<ConvNormIds>> = vec![None; levels];
        let mut dec_one: Vec<Option<ConvNormIds>> = vec![None; levels];
        for i in (0..levels).rev() {
            dec_pre[i] = (cur.take(), cur.take());
            dec_conv[i] = Some(cur.block());
            dec_one[i] = Some(cur.block());
        }
        let head_w = cur.take();
        let head_b = cur.take();
        GxIds {
            enc_down,
            enc_conv,
            skip,
            dec_pre,
            dec_conv: dec_conv.into_iter().map(Option::unwrap).collect(),
            dec_one: dec_one.into_iter().map(Option::unwrap).collect(),
            head_w,
            head_b,
        }
    }

    fn conv_norm_lrelu<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        x: NodeId,
        ids: ConvNormIds,
        stride: usize,
    ) -> NodeId {
        let eps = T::of_f64(CHANNEL_NORM_EPS);
        let slope = T::of_f64(LEAKY_SLOPE);
        let c = tape.conv2d(x, ids.w, stride, Pad::ReflectSame);
        let c = add_channel_bias(tape, c, ids.b);
        let n = tape.channel_norm(c, ids.g, ids.s, eps);
        tape.leaky_relu(n, slope)
    }

    /// Forward pass over bound parameters; returns the cropped sigmoid
    /// output of shape `out_channels x out_h x out_w`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ids: &[NodeId], z: NodeId) -> NodeId {
        assert_eq!(tape.value(z).shape(), self.z_shape().as_slice(), "gx input shape");
        let g = self.group_ids(ids);
        let eps = T::of_f64(CHANNEL_NORM_EPS);
        let levels = self.cfg.levels;
        let mut enc_inputs = Vec::with_capacity(levels);
        let mut cur = z;
        for i in 0..levels {
            enc_inputs.push(cur);
            let d = self.conv_norm_lrelu(tape, cur, g.enc_down[i], 2);
            cur = self.conv_norm_lrelu(tape, d, g.enc_conv[i], 1);
        }
        for i in (0..levels).rev() {
            let up = tape.upsample2x(cur);
            let sk = self.conv_norm_lrelu(tape, enc_inputs[i], g.skip[i], 1);
            let cat = tape.concat_channels(sk, up);
            let (pg, ps) = g.dec_pre[i];
            let pre = tape.channel_norm(cat, pg, ps, eps);
            let c = self.conv_norm_lrelu(tape, pre, g.dec_conv[i], 1);
            cur = self.conv_norm_lrelu(tape, c, g.dec_one[i], 1);
        }
        let head = tape.conv2d(cur, g.head_w, 1, Pad::Valid);
        let head = add_channel_bias(tape, head, g.head_b);
        let sig = tape.sigmoid(head);
        let top = (self.z_h - self.out_h) / 2;
        let left = (self.z_w - self.out_w) / 2;
        tape.crop_spatial(sig, top, left, self.out_h, self.out_w)
    }

    /// Forward pass without gradient bookkeeping.
    pub fn infer<T: Scalar>(&self, params: &ParamStore<T>, z: &Tensor<T>) -> Tensor<T> {
        let mut tape = Tape::inference();
        let ids = params.bind(&mut tape, false);
        let zid = tape.leaf(z.clone());
        let out = self.forward(&mut tape, &ids, zid);
        tape.value(out).clone()
    }
}

/// Add a per-channel bias over the spatial extent of `x`.
fn add_channel_bias<T: Scalar>(tape: &mut Tape<T>, x: NodeId, bias: NodeId) -> NodeId {
    let (c, h, w) = tape.value(x).dims3();
    assert_eq!(tape.value(bias).numel(), c, "bias length vs channels");
    let spread = tape.broadcast_channel(bias, h, w);
    tape.add(x, spread)
}

// ---------------------------------------------------------------------------
// noise inputs
// ---------------------------------------------------------------------------

/// The fixed random inputs of both generators for one run.
#[derive(Debug, Clone)]
pub struct NoiseInputs<T> {
    pub z_x: Tensor<T>,
    pub z_k: Tensor<T>,
    pub seed: u64,
    pub perturb_std: f64,
}

/// Uniform `[0, 0.1)` noise tensor from a seed (image-noise stream).
pub fn sample_z<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    rng::uniform_tensor(&mut rng::stream_rng(seed, stream::Z_X), shape, 0.0, Z_RANGE)
}

/// Draw both generator inputs for a run. `z_x` and `z_k` come from separate
/// streams of the same seed; regenerating with the same seed reproduces them
/// exactly.
pub fn sample_noise_inputs<T: Scalar>(gx: &Gx, gk: &GkConfig, seed: u64) -> NoiseInputs<T> {
    let z_x = rng::uniform_tensor(&mut rng::stream_rng(seed, stream::Z_X), &gx.z_shape(), 0.0, Z_RANGE);
    let z_k = rng::uniform_tensor(&mut rng::stream_rng(seed, stream::Z_K), &[gk.z_dim], 0.0, Z_RANGE);
    NoiseInputs { z_x, z_k, seed, perturb_std: PERTURB_STD }
}

impl<T: Scalar> NoiseInputs<T> {
    /// `z_x` plus a fresh Gaussian perturbation drawn from `rng`. The
    /// kernel input is never perturbed.
    pub fn perturbed_z_x(&self, rng: &mut ChaCha8Rng) -> Tensor<T> {
        let noise = rng::normal_tensor::<T>(rng, self.z_x.shape(), self.perturb_std);
        let data = self.z_x.data().iter().zip(noise.data()).map(|(&a, &b)| a + b).collect();
        Tensor::from_vec(self.z_x.shape(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk_with_zeroed_params_is_uniform() {
        let cfg = GkConfig::new(7);
        let (gk, mut params) = build_gk::<f64>(&cfg, 0);
        for i in 0..params.len() {
            for v in params.tensor_mut(i).data_mut() {
                *v = 0.0;
            }
        }
        let z = sample_z::<f64>(&[cfg.z_dim], 0);
        let out = gk.infer(&params, &z);
        assert_eq!(out.shape(), &[7, 7]);
        for &v in out.data() {
            assert!((v - 1.0 / 49.0).abs() < 1e-12, "expected uniform, got {v}");
        }
    }

    #[test]
    fn gk_outputs_lie_on_the_simplex() {
        let cfg = GkConfig::new(27);
        for seed in 0..20 {
            let (gk, params) = build_gk::<f32>(&cfg, seed);
            let z = rng::uniform_tensor::<f32>(
                &mut rng::stream_rng(seed, stream::Z_K),
                &[cfg.z_dim],
                0.0,
                Z_RANGE,
            );
            let (min, sum_dev) = simplex_error(&gk.infer(&params, &z));
            assert!(min >= 0.0, "negative kernel entry {min} at seed {seed}");
            assert!(sum_dev <= 1e-6, "kernel sum off by {sum_dev} at seed {seed}");
        }
    }

    #[test]
    fn gk_depth_variants_have_expected_layer_dims() {
        assert_eq!(GkConfig::with_depth(5, GkDepth::NoHidden).layer_dims(), vec![(25, 200)]);
        assert_eq!(GkConfig::with_depth(5, GkDepth::OneHidden).layer_dims(), vec![(1000, 200), (25, 1000)]);
        assert_eq!(
            GkConfig::with_depth(5, GkDepth::TwoHidden).layer_dims(),
            vec![(1000, 200), (1000, 1000), (25, 1000)]
        );
    }

    #[test]
    fn gx_output_matches_requested_shape_and_range() {
        let cfg = GxConfig::desk(1);
        let (gx, params) = build_gx::<f32>(&cfg, (37, 41), 3);
        assert_eq!(params.len(), gx.param_count());
        assert_eq!(gx.z_shape(), vec![8, 40, 48]);
        let noise = sample_noise_inputs::<f32>(&gx, &GkConfig::new(5), 3);
        let out = gx.infer(&params, &noise.z_x);
        assert_eq!(out.shape(), &[1, 37, 41]);
        for &v in out.data() {
            assert!(v.is_finite() && (0.0..=1.0).contains(&v), "output {v} outside [0, 1]");
        }
    }

    #[test]
    fn gx_handles_multichannel_output() {
        let cfg = GxConfig::desk(3);
        let (gx, params) = build_gx::<f32>(&cfg, (24, 24), 1);
        let noise = sample_noise_inputs::<f32>(&gx, &GkConfig::new(5), 1);
        let out = gx.infer(&params, &noise.z_x);
        assert_eq!(out.shape(), &[3, 24, 24]);
    }

    #[test]
    fn builds_are_deterministic_in_the_seed() {
        let cfg = GxConfig::desk(1);
        let (_, a) = build_gx::<f64>(&cfg, (32, 32), 7);
        let (_, b) = build_gx::<f64>(&cfg, (32, 32), 7);
        let (_, c) = build_gx::<f64>(&cfg, (32, 32), 8);
        for i in 0..a.len() {
            assert_eq!(a.tensor(i).data(), b.tensor(i).data(), "seed 7 rebuild diverged at {}", a.name(i));
        }
        let same = (0..a.len()).all(|i| a.tensor(i).data() == c.tensor(i).data());
        assert!(!same, "different seeds produced identical parameters");

        let (_, ka) = build_gk::<f64>(&GkConfig::new(5), 7);
        let (_, kb) = build_gk::<f64>(&GkConfig::new(5), 7);
        for i in 0..ka.len() {
            assert_eq!(ka.tensor(i).data(), kb.tensor(i).data());
        }
    }

    #[test]
    fn init_draws_respect_the_fan_in_bound() {
        let cfg = GkConfig::new(5);
        let (_, params) = build_gk::<f64>(&cfg, 11);
        let b0 = (1.0f64 / 200.0).sqrt();
        for &v in params.tensor(0).data() {
            assert!(v.abs() <= b0, "weight {v} outside [-{b0}, {b0}]");
        }
        let spread = params.tensor(0).data().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(spread > b0 * 0.5, "draws suspiciously concentrated (max |w| = {spread})");
    }

    #[test]
    fn noise_input_mean_matches_its_range() {
        let z = sample_z::<f64>(&[1_000_000], 0);
        let mean = kahan_sum(z.data().iter().copied()) / 1e6;
        assert!((0.0497..=0.0503).contains(&mean), "mean of U[0, 0.1) draws was {mean}");
    }

    #[test]
    fn perturbation_leaves_base_noise_and_kernel_input_alone() {
        let cfg = GxConfig::desk(1);
        let (gx, _) = build_gx::<f64>(&cfg, (16, 16), 5);
        let noise = sample_noise_inputs::<f64>(&gx, &GkConfig::new(5), 5);
        let base = noise.z_x.clone();
        let mut rng = rng::stream_rng(5, stream::PERTURB);
        let p1 = noise.perturbed_z_x(&mut rng);
        let p2 = noise.perturbed_z_x(&mut rng);
        assert_eq!(noise.z_x.data(), base.data(), "perturbation mutated the base input");
        assert_ne!(p1.data(), p2.data(), "successive perturbations were identical");
        let max_shift = p1
            .data()
            .iter()
            .zip(base.data())
            .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
        assert!(max_shift > 0.0 && max_shift < PERTURB_STD * 8.0, "shift {max_shift} vs std {PERTURB_STD}");
        // Same stream state reproduces the same perturbation.
        let mut rng2 = rng::stream_rng(5, stream::PERTURB);
        assert_eq!(noise.perturbed_z_x(&mut rng2).data(), p1.data());
    }

    /// Fit a random target kernel by plain gradient descent on the mean
    /// squared error and compare final losses across depths: the one-hidden
    /// net should beat the linear (no-hidden) net on most targets.
    #[test]
    fn deeper_kernel_net_fits_targets_better() {
        fn fit(depth: GkDepth, target: &Tensor<f64>, seed: u64) -> f64 {
            let cfg = GkConfig::with_depth(5, depth);
            let (gk, mut params) = build_gk::<f64>(&cfg, seed);
            let z = rng::uniform_tensor::<f64>(&mut rng::stream_rng(seed, stream::Z_K), &[cfg.z_dim], 0.0, Z_RANGE);
            let mut last = f64::INFINITY;
            for _ in 0..150 {
                let mut tape = Tape::new();
                let ids = params.bind(&mut tape, true);
                let zid = tape.leaf(z.clone());
                let out = gk.forward(&mut tape, &ids, zid);
                let tgt = tape.leaf(target.clone());
                let r = tape.sub(out, tgt);
                let sq = tape.mul(r, r);
                let s = tape.sum_all(sq);
                let loss = tape.scale(s, 1.0 / target.numel() as f64);
                last = tape.value(loss).item();
                let grads = tape.backward(loss);
                for (i, d) in params.collect_grads(&grads, &ids).into_iter().enumerate() {
                    for (p, g) in params.tensor_mut(i).data_mut().iter_mut().zip(d.data()) {
                        *p -= 200.0 * g;
                    }
                }
            }
            last
        }

        let mut wins = 0;
        for t in 0..5u64 {
            let raw = rng::uniform_tensor::<f64>(&mut rng::stream_rng(100 + t, stream::KERNEL_WALK), &[5, 5], 0.0, 1.0);
            let sum: f64 = raw.data().iter().sum();
            let target = raw.map(|v| v / sum);
            let shallow = fit(GkDepth::NoHidden, &target, t);
            let deep = fit(GkDepth::OneHidden, &target, t);
            if deep < shallow {
                wins += 1;
            }
        }
        assert!(wins >= 4, "one-hidden net won only {wins}/5 fits");
    }
}
