//! The optimization loop: Adam over the parameters of both generators (or
//! of the image generator alone when the kernel is known), with a stepped
//! learning-rate schedule, per-iteration input perturbation, loss history,
//! and intermediate snapshots.
//!
//! Each iteration of the joint mode records exactly one gradient tape and
//! runs one backward sweep; the alternating mode records two (kernel half,
//! then image half). Snapshots and final outputs come from inference
//! passes on the unperturbed inputs and are never counted as gradient
//! evaluations.

use std::time::Instant;

use crate::generators::{self, build_gk, build_gx, Gk, GkConfig, Gx, GxConfig, NoiseInputs};
use crate::kernels::BlurBackend;
use crate::model::{self, LossBreakdown};
use crate::rng::{self, stream};
use crate::scalar::Scalar;
use crate::tape::{ParamStore, Tape};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// How the two generators are optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One tape over both parameter sets; a single simultaneous step.
    Joint,
    /// Per iteration: step the kernel net with the image net frozen, then
    /// step the image net with the updated kernel net frozen.
    Alternating,
    /// The kernel is given and fixed; only the image net is optimized.
    FixedKernel,
}

/// Everything that pins down one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub iters: usize,
    pub lr: f64,
    /// Iterations (1-based, inclusive) at which the rate is multiplied by
    /// `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Iterations after whose step an intermediate (image, kernel) pair is
    /// recorded.
    pub snapshot_iters: Vec<usize>,
    pub backend: BlurBackend,
    pub gx: GxConfig,
    pub gk: GkConfig,
}

impl RunConfig {
    /// Full-scale defaults: 5000 iterations at 0.01, halved at 2000, 3000,
    /// and 4000, with the five-level generator.
    pub fn full(kernel_size: usize, out_channels: usize) -> Self {
        RunConfig {
            mode: Mode::Joint,
            iters: 5000,
            lr: 0.01,
            milestones: vec![2000, 3000, 4000],
            lr_decay: 0.5,
            lambda: model::LAMBDA_FLOOR,
            seed: 0,
            snapshot_iters: vec![1, 20, 100, 600, 2000, 5000],
            backend: BlurBackend::Auto,
            gx: GxConfig::full(out_channels),
            gk: GkConfig::new(kernel_size),
        }
    }

    /// Reduced defaults for CPU-speed runs: 1500 iterations with the
    /// three-level generator, milestones scaled to match the full schedule
    /// proportionally.
    pub fn desk(kernel_size: usize, out_channels: usize) -> Self {
        RunConfig {
            mode: Mode::Joint,
            iters: 1500,
            lr: 0.01,
            milestones: vec![600, 900, 1200],
            lr_decay: 0.5,
            lambda: model::LAMBDA_FLOOR,
            seed: 0,
            snapshot_iters: vec![1, 20, 100, 600, 1500],
            backend: BlurBackend::Auto,
            gx: GxConfig::desk(out_channels),
            gk: GkConfig::new(kernel_size),
        }
    }

    /// Learning rate in effect at iteration `t` (1-based): the base rate
    /// times one decay factor per milestone at or before `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        let halvings = self.milestones.iter().filter(|&&m| m <= t).count();
        self.lr * self.lr_decay.powi(halvings as i32)
    }

    fn validate<T: Scalar>(&self, y: &Tensor<T>) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Config("iteration count must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        let (c, _, _) = y.dims3();
        if self.gx.out_channels != c {
            return Err(Error::Config(format!(
                "generator emits {} channels but the observation has {c}",
                self.gx.out_channels
            )));
        }
        Ok(())
    }
}

/// An intermediate state of the run, taken after the step at `iter`.
#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    pub iter: usize,
    pub image: Tensor<T>,
    pub kernel: Tensor<T>,
}

/// Outcome of one optimization run.
#[derive(Debug, Clone)]
pub struct RunReport<T> {
    /// Per-iteration recorded losses (the kernel-half loss in alternating
    /// mode). If the run diverged this ends with the offending evaluation.
    pub losses: Vec<LossBreakdown>,
    /// Final image from the unperturbed input.
    pub image: Tensor<T>,
    /// Final kernel (the fixed one in fixed-kernel mode).
    pub kernel: Tensor<T>,
    /// Loss at the final parameters on the unperturbed input.
    pub final_loss: LossBreakdown,
    pub snapshots: Vec<Snapshot<T>>,
    /// Number of backward sweeps performed.
    pub gradient_evals: usize,
    pub wall_secs: f64,
    /// Iteration whose loss or gradients were non-finite, if any; the
    /// reported image/kernel are from just before that step.
    pub diverged_at: Option<usize>,
}

/// Adam with bias correction over the tensors of one parameter store.
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u32,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let m = (0..params.len()).map(|i| Tensor::zeros(params.tensor(i).shape())).collect();
        let v = (0..params.len()).map(|i| Tensor::zeros(params.tensor(i).shape())).collect();
        AdamState { m, v, t: 0 }
    }

    /// One update at rate `lr`; `grads` must align with `params` order.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "gradient list vs parameter list");
        self.t += 1;
        // Bias corrections in f64; they blow up numerically for small t in
        // f32 runs otherwise.
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let scale = T::of_f64(lr / c1);
        let (b1, b2) = (T::of_f64(ADAM_BETA1), T::of_f64(ADAM_BETA2));
        let (nb1, nb2) = (T::of_f64(1.0 - ADAM_BETA1), T::of_f64(1.0 - ADAM_BETA2));
        let (rc2, eps) = (T::of_f64(1.0 / c2), T::of_f64(ADAM_EPS));
        for i in 0..params.len() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, p) in params.tensor_mut(i).data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + nb1 * g[j];
                v[j] = b2 * v[j] + nb2 * g[j] * g[j];
                *p = *p - scale * m[j] / ((v[j] * rc2).sqrt() + eps);
            }
        }
    }
}

/// Dispatch on `cfg.mode`. `fixed_kernel` must be given exactly in
/// fixed-kernel mode.
pub fn run<T: Scalar>(
    y: &Tensor<T>,
    fixed_kernel: Option<&Tensor<T>>,
    cfg: &RunConfig,
    progress: &mut dyn FnMut(usize, &LossBreakdown),
) -> Result<RunReport<T>> {
    match (cfg.mode, fixed_kernel) {
        (Mode::FixedKernel, Some(k)) => run_fixed_kernel(y, k, cfg, progress),
        (Mode::FixedKernel, None) => Err(Error::Config("fixed-kernel mode needs a kernel".into())),
        (_, Some(_)) => Err(Error::Config("a fixed kernel only makes sense in fixed-kernel mode".into())),
        (Mode::Joint, None) => run_joint(y, cfg, progress),
        (Mode::Alternating, None) => run_alternating(y, cfg, progress),
    }
}

/// Shared run state: networks, noise inputs, bookkeeping.
struct Engine<'a, T: Scalar> {
    cfg: &'a RunConfig,
    y: &'a Tensor<T>,
    gx: Gx,
    gxp: ParamStore<T>,
    noise: NoiseInputs<T>,
    perturb: rand_chacha::ChaCha8Rng,
    snapshots: Vec<Snapshot<T>>,
    snapshot_iters: Vec<usize>,
    losses: Vec<LossBreakdown>,
    gradient_evals: usize,
    started: Instant,
}

impl<'a, T: Scalar> Engine<'a, T> {
    fn new(y: &'a Tensor<T>, cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate(y)?;
        let (c, hy, wy) = y.dims3();
        debug_assert_eq!(c, cfg.gx.out_channels);
        let k = cfg.gk.kernel_size;
        let (gx, gxp) = build_gx::<T>(&cfg.gx, (hy + k - 1, wy + k - 1), cfg.seed);
        let noise = generators::sample_noise_inputs(&gx, &cfg.gk, cfg.seed);
        let mut snapshot_iters: Vec<usize> =
            cfg.snapshot_iters.iter().copied().filter(|&t| t >= 1 && t <= cfg.iters).collect();
        snapshot_iters.sort_unstable();
        snapshot_iters.dedup();
        Ok(Engine {
            cfg,
            y,
            gx,
            gxp,
            noise,
            perturb: rng::stream_rng(cfg.seed, stream::PERTURB),
            snapshots: Vec::new(),
            snapshot_iters,
            losses: Vec::new(),
            gradient_evals: 0,
            started: Instant::now(),
        })
    }

    /// Image from the unperturbed input at the current parameters.
    fn clean_image(&self) -> Tensor<T> {
        self.gx.infer(&self.gxp, &self.noise.z_x)
    }

    /// Loss at the current parameters on the unperturbed input.
    fn clean_loss(&self, kernel: &Tensor<T>) -> LossBreakdown {
        let mut tape = Tape::inference();
        let x = tape.leaf(self.clean_image());
        let k = tape.leaf(kernel.clone());
        let yid = tape.leaf(self.y.clone());
        let obj = model::objective(&mut tape, x, k, yid, self.cfg.lambda, self.cfg.backend);
        model::breakdown(&tape, &obj, self.cfg.lambda)
    }

    fn record_snapshot(&mut self, t: usize, kernel: &Tensor<T>) {
        if self.snapshot_iters.contains(&t) {
            self.snapshots.push(Snapshot { iter: t, image: self.clean_image(), kernel: kernel.clone() });
        }
    }

    fn finish(self, kernel: Tensor<T>, diverged_at: Option<usize>) -> RunReport<T> {
        let final_loss = self.clean_loss(&kernel);
        let image = self.clean_image();
        RunReport {
            losses: self.losses,
            image,
            kernel,
            final_loss,
            snapshots: self.snapshots,
            gradient_evals: self.gradient_evals,
            wall_secs: self.started.elapsed().as_secs_f64(),
            diverged_at,
        }
    }
}

fn all_finite<T: Scalar>(grads: &[Tensor<T>]) -> bool {
    grads.iter().all(Tensor::all_finite)
}

fn run_joint<T: Scalar>(
    y: &Tensor<T>,
    cfg: &RunConfig,
    progress: &mut dyn FnMut(usize, &LossBreakdown),
) -> Result<RunReport<T>> {
    let mut e = Engine::new(y, cfg)?;
    let (gk, mut gkp) = build_gk::<T>(&cfg.gk, cfg.seed);
    let mut adam_x = AdamState::new(&e.gxp);
    let mut adam_k = AdamState::new(&gkp);
    for t in 1..=cfg.iters {
        let zx = e.noise.perturbed_z_x(&mut e.perturb);
        let mut tape = Tape::new();
        let gx_ids = e.gxp.bind(&mut tape, true);
        let gk_ids = gkp.bind(&mut tape, true);
        let zx_id = tape.leaf(zx);
        let zk_id = tape.leaf(e.noise.z_k.clone());
        let x = e.gx.forward(&mut tape, &gx_ids, zx_id);
        let k = gk.forward(&mut tape, &gk_ids, zk_id);
        let yid = tape.leaf(y.clone());
        let obj = model::objective(&mut tape, x, k, yid, cfg.lambda, cfg.backend);
        let bd = model::breakdown(&tape, &obj, cfg.lambda);
        e.losses.push(bd);
        progress(t, &bd);
        if !bd.total.is_finite() {
            let kernel = gk.infer(&gkp, &e.noise.z_k);
            return Ok(e.finish(kernel, Some(t)));
        }
        let grads = tape.backward(obj.loss);
        e.gradient_evals += 1;
        let gx_g = e.gxp.collect_grads(&grads, &gx_ids);
        let gk_g = gkp.collect_grads(&grads, &gk_ids);
        if !(all_finite(&gx_g) && all_finite(&gk_g)) {
            let kernel = gk.infer(&gkp, &e.noise.z_k);
            return Ok(e.finish(kernel, Some(t)));
        }
        let lr = cfg.lr_at(t);
        adam_x.step(&mut e.gxp, &gx_g, lr);
        adam_k.step(&mut gkp, &gk_g, lr);
        if e.snapshot_iters.contains(&t) {
            let kernel = gk.infer(&gkp, &e.noise.z_k);
            e.record_snapshot(t, &kernel);
        }
    }
    let kernel = gk.infer(&gkp, &e.noise.z_k);
    Ok(e.finish(kernel, None))
}

fn run_alternating<T: Scalar>(
    y: &Tensor<T>,
    cfg: &RunConfig,
    progress: &mut dyn FnMut(usize, &LossBreakdown),
) -> Result<RunReport<T>> {
    let mut e = Engine::new(y, cfg)?;
    let (gk, mut gkp) = build_gk::<T>(&cfg.gk, cfg.seed);
    let mut adam_x = AdamState::new(&e.gxp);
    let mut adam_k = AdamState::new(&gkp);
    // One forward/backward for a chosen half; the other net's parameters are
    // bound as constants so backprop prunes their subgraph.
    let half = |e: &mut Engine<T>,
                gkp: &ParamStore<T>,
                gk: &Gk,
                zx: &Tensor<T>,
                train_x: bool|
     -> (LossBreakdown, Vec<Tensor<T>>) {
        let mut tape = Tape::new();
        let gx_ids = e.gxp.bind(&mut tape, train_x);
        let gk_ids = gkp.bind(&mut tape, !train_x);
        let zx_id = tape.leaf(zx.clone());
        let zk_id = tape.leaf(e.noise.z_k.clone());
        let x = e.gx.forward(&mut tape, &gx_ids, zx_id);
        let k = gk.forward(&mut tape, &gk_ids, zk_id);
        let yid = tape.leaf(e.y.clone());
        let obj = model::objective(&mut tape, x, k, yid, cfg.lambda, cfg.backend);
        let bd = model::breakdown(&tape, &obj, cfg.lambda);
        if !bd.total.is_finite() {
            return (bd, Vec::new());
        }
        let grads = tape.backward(obj.loss);
        e.gradient_evals += 1;
        let ids = if train_x { &gx_ids } else { &gk_ids };
        let store = if train_x { &e.gxp } else { gkp };
        (bd, store.collect_grads(&grads, ids))
    };
    for t in 1..=cfg.iters {
        let zx = e.noise.perturbed_z_x(&mut e.perturb);
        let lr = cfg.lr_at(t);
        // Kernel half first; its loss is the one recorded for the iteration.
        let (bd, gk_g) = half(&mut e, &gkp, &gk, &zx, false);
        e.losses.push(bd);
        progress(t, &bd);
        if gk_g.is_empty() || !all_finite(&gk_g) {
            let kernel = gk.infer(&gkp, &e.noise.z_k);
            return Ok(e.finish(kernel, Some(t)));
        }
        adam_k.step(&mut gkp, &gk_g, lr);
        // Image half against the just-updated kernel, same perturbed input.
        let (_, gx_g) = half(&mut e, &gkp, &gk, &zx, true);
        if gx_g.is_empty() || !all_finite(&gx_g) {
            let kernel = gk.infer(&gkp, &e.noise.z_k);
            return Ok(e.finish(kernel, Some(t)));
        }
        adam_x.step(&mut e.gxp, &gx_g, lr);
        if e.snapshot_iters.contains(&t) {
            let kernel = gk.infer(&gkp, &e.noise.z_k);
            e.record_snapshot(t, &kernel);
        }
    }
    let kernel = gk.infer(&gkp, &e.noise.z_k);
    Ok(e.finish(kernel, None))
}

fn run_fixed_kernel<T: Scalar>(
    y: &Tensor<T>,
    kernel: &Tensor<T>,
    cfg: &RunConfig,
    progress: &mut dyn FnMut(usize, &LossBreakdown),
) -> Result<RunReport<T>> {
    let (kh, kw) = kernel.dims2();
    if kh != kw || kh != cfg.gk.kernel_size {
        return Err(Error::Config(format!(
            "fixed kernel is {kh}x{kw} but the run is configured for {0}x{0}",
            cfg.gk.kernel_size
        )));
    }
    let mut e = Engine::new(y, cfg)?;
    let mut adam_x = AdamState::new(&e.gxp);
    for t in 1..=cfg.iters {
        let zx = e.noise.perturbed_z_x(&mut e.perturb);
        let mut tape = Tape::new();
        let gx_ids = e.gxp.bind(&mut tape, true);
        let zx_id = tape.leaf(zx);
        let x = e.gx.forward(&mut tape, &gx_ids, zx_id);
        let k = tape.leaf(kernel.clone());
        let yid = tape.leaf(y.clone());
        let obj = model::objective(&mut tape, x, k, yid, cfg.lambda, cfg.backend);
        let bd = model::breakdown(&tape, &obj, cfg.lambda);
        e.losses.push(bd);
        progress(t, &bd);
        if !bd.total.is_finite() {
            return Ok(e.finish(kernel.clone(), Some(t)));
        }
        let grads = tape.backward(obj.loss);
        e.gradient_evals += 1;
        let gx_g = e.gxp.collect_grads(&grads, &gx_ids);
        if !all_finite(&gx_g) {
            return Ok(e.finish(kernel.clone(), Some(t)));
        }
        adam_x.step(&mut e.gxp, &gx_g, cfg.lr_at(t));
        e.record_snapshot(t, kernel);
    }
    Ok(e.finish(kernel.clone(), None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::tapes_constructed;

    /// A small observation the desk generator can handle quickly: blur a
    /// smooth synthetic image with a simple 3x3 kernel.
    fn tiny_observation() -> (Tensor<f32>, Tensor<f32>) {
        let (h, w) = (14, 14);
        let mut x = Tensor::zeros(&[1, h, w]);
        for i in 0..h {
            for j in 0..w {
                let v = 0.5 + 0.4 * ((i as f32) / 6.0).sin() * ((j as f32) / 5.0).cos();
                x.data_mut()[i * w + j] = v;
            }
        }
        let kernel = Tensor::from_vec(&[3, 3], vec![0.0, 0.1, 0.0, 0.1, 0.6, 0.1, 0.0, 0.1, 0.0]);
        let mut y = Tensor::zeros(&[1, h - 2, w - 2]);
        crate::kernels::blur_valid_fwd(x.data(), (1, h, w), kernel.data(), 3, BlurBackend::Direct, y.data_mut());
        (y, kernel)
    }

    fn tiny_config(mode: Mode, iters: usize) -> RunConfig {
        let mut cfg = RunConfig::desk(3, 1);
        cfg.mode = mode;
        cfg.iters = iters;
        cfg.snapshot_iters = vec![1, iters];
        cfg.lambda = 1e-6;
        cfg
    }

    #[test]
    fn schedule_matches_the_published_milestones() {
        let cfg = RunConfig::full(27, 1);
        assert_eq!(cfg.iters, 5000);
        assert_eq!(cfg.milestones, vec![2000, 3000, 4000]);
        assert_eq!(cfg.snapshot_iters, vec![1, 20, 100, 600, 2000, 5000]);
        assert!((cfg.lr_at(1) - 0.01).abs() < 1e-15);
        assert!((cfg.lr_at(1999) - 0.01).abs() < 1e-15);
        assert!((cfg.lr_at(2000) - 0.005).abs() < 1e-15);
        assert!((cfg.lr_at(2500) - 0.005).abs() < 1e-15);
        assert!((cfg.lr_at(4500) - 0.00125).abs() < 1e-15);
        assert!((cfg.lr_at(5000) - 0.00125).abs() < 1e-15);
    }

    #[test]
    fn adam_takes_unit_steps_under_constant_gradient() {
        // With a constant gradient the bias-corrected update is lr per step
        // (up to the eps guard), independent of the gradient's magnitude.
        let mut params = ParamStore::<f64>::new();
        params.push("p", Tensor::from_vec(&[2], vec![1.0, -3.0]));
        let mut adam = AdamState::new(&params);
        let g = Tensor::from_vec(&[2], vec![7.0, -0.2]);
        adam.step(&mut params, std::slice::from_ref(&g), 0.1);
        adam.step(&mut params, std::slice::from_ref(&g), 0.1);
        let p = params.tensor(0).data();
        assert!((p[0] - 0.8).abs() < 1e-6, "got {}", p[0]);
        assert!((p[1] - (-2.8)).abs() < 1e-6, "got {}", p[1]);
    }

    #[test]
    fn joint_mode_records_one_tape_per_iteration() {
        let (y, _) = tiny_observation();
        let before = tapes_constructed();
        let report = run(&y, None, &tiny_config(Mode::Joint, 3), &mut |_, _| {}).unwrap();
        assert_eq!(tapes_constructed() - before, 3, "joint mode should record 3 tapes for 3 iterations");
        assert_eq!(report.gradient_evals, 3);
        assert_eq!(report.losses.len(), 3);
        assert!(report.diverged_at.is_none());
    }

    #[test]
    fn alternating_mode_records_two_tapes_per_iteration() {
        let (y, _) = tiny_observation();
        let before = tapes_constructed();
        let report = run(&y, None, &tiny_config(Mode::Alternating, 3), &mut |_, _| {}).unwrap();
        assert_eq!(tapes_constructed() - before, 6, "alternating mode should record 6 tapes for 3 iterations");
        assert_eq!(report.gradient_evals, 6);
        assert_eq!(report.losses.len(), 3);
    }

    #[test]
    fn fixed_kernel_mode_only_trains_the_image_net() {
        let (y, k) = tiny_observation();
        let before = tapes_constructed();
        let report = run(&y, Some(&k), &tiny_config(Mode::FixedKernel, 3), &mut |_, _| {}).unwrap();
        assert_eq!(tapes_constructed() - before, 3);
        assert_eq!(report.kernel.data(), k.data(), "fixed kernel must be returned untouched");
    }

    #[test]
    fn dispatch_rejects_mismatched_kernel_arguments() {
        let (y, k) = tiny_observation();
        assert!(matches!(run(&y, None, &tiny_config(Mode::FixedKernel, 1), &mut |_, _| {}), Err(Error::Config(_))));
        assert!(matches!(run(&y, Some(&k), &tiny_config(Mode::Joint, 1), &mut |_, _| {}), Err(Error::Config(_))));
        let bad = Tensor::<f32>::filled(&[5, 5], 0.04);
        assert!(matches!(run(&y, Some(&bad), &tiny_config(Mode::FixedKernel, 1), &mut |_, _| {}), Err(Error::Config(_))));
    }

    #[test]
    fn loss_decreases_and_outputs_stay_valid() {
        let (y, _) = tiny_observation();
        let report = run(&y, None, &tiny_config(Mode::Joint, 60), &mut |_, _| {}).unwrap();
        let first = report.losses[0].total;
        let last = report.final_loss.total;
        assert!(last < first * 0.5, "loss did not shrink: {first} -> {last}");
        let (min, sum_dev) = generators::simplex_error(&report.kernel);
        assert!(min >= 0.0 && sum_dev <= 1e-6, "kernel left the simplex: min {min}, sum dev {sum_dev}");
        assert_eq!(report.image.shape(), &[1, 14, 14]);
        assert!(report.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let (y, _) = tiny_observation();
        let cfg = tiny_config(Mode::Alternating, 5);
        let a = run(&y, None, &cfg, &mut |_, _| {}).unwrap();
        let b = run(&y, None, &cfg, &mut |_, _| {}).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.kernel.data(), b.kernel.data());
        let la: Vec<f64> = a.losses.iter().map(|l| l.total).collect();
        let lb: Vec<f64> = b.losses.iter().map(|l| l.total).collect();
        assert_eq!(la, lb, "loss curves differ between identical runs");
    }

    #[test]
    fn snapshots_are_taken_at_the_requested_iterations() {
        let (y, _) = tiny_observation();
        let mut cfg = tiny_config(Mode::Joint, 10);
        cfg.snapshot_iters = vec![2, 5, 10, 400]; // 400 is past the end and dropped
        let report = run(&y, None, &cfg, &mut |_, _| {}).unwrap();
        let iters: Vec<usize> = report.snapshots.iter().map(|s| s.iter).collect();
        assert_eq!(iters, vec![2, 5, 10]);
        for s in &report.snapshots {
            assert_eq!(s.image.shape(), report.image.shape());
            assert_eq!(s.kernel.shape(), report.kernel.shape());
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_a_partial_report() {
        let (y, _) = tiny_observation();
        let mut cfg = tiny_config(Mode::Joint, 50);
        cfg.lambda = f64::INFINITY;
        let report = run(&y, None, &cfg, &mut |_, _| {}).unwrap();
        assert_eq!(report.diverged_at, Some(1));
        assert_eq!(report.losses.len(), 1);
        assert!(!report.losses[0].total.is_finite());
        assert_eq!(report.gradient_evals, 0, "no backward sweep after a non-finite loss");
        assert!(report.image.all_finite(), "pre-divergence parameters should still be usable");
    }

    #[test]
    fn non_finite_gradients_abort_even_when_the_recorded_loss_is_finite() {
        let (y, _) = tiny_observation();
        let mut cfg = tiny_config(Mode::Joint, 50);
        // Large enough to overflow the f32 tape (infinite gradients) while
        // the f64 breakdown stays finite.
        cfg.lambda = 1e300;
        let report = run(&y, None, &cfg, &mut |_, _| {}).unwrap();
        assert_eq!(report.diverged_at, Some(1));
        assert!(report.losses[0].total.is_finite());
    }

    #[test]
    fn progress_callback_sees_every_iteration_in_order() {
        let (y, _) = tiny_observation();
        let mut seen = Vec::new();
        run(&y, None, &tiny_config(Mode::Joint, 4), &mut |t, bd| seen.push((t, bd.total))).unwrap();
        assert_eq!(seen.len(), 4);
        assert!(seen.iter().enumerate().all(|(i, &(t, _))| t == i + 1));
    }

    #[test]
    fn config_validation_catches_user_errors() {
        let (y, _) = tiny_observation();
        let mut cfg = tiny_config(Mode::Joint, 1);
        cfg.iters = 0;
        assert!(matches!(run(&y, None, &cfg, &mut |_, _| {}), Err(Error::Config(_))));
        let mut cfg = tiny_config(Mode::Joint, 1);
        cfg.gx.out_channels = 3;
        assert!(matches!(run(&y, None, &cfg, &mut |_, _| {}), Err(Error::Config(_))));
        let mut cfg = tiny_config(Mode::Joint, 1);
        cfg.lr = 0.0;
        assert!(matches!(run(&y, None, &cfg, &mut |_, _| {}), Err(Error::Config(_))));
    }
}
