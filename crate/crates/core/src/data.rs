//! Synthetic benchmark data and noise estimation: seeded random-walk blur
//! kernels, valid-convolution observations with additive Gaussian noise,
//! a wavelet-MAD noise-level estimator for picking the regularization
//! weight, and directory round-trips for ground-truth pairs.

use std::path::Path;

use crate::generators::simplex_error;
use crate::kernels::{self, BlurBackend};
use crate::rng::{self, stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{io, Error, Result};

/// Parameters of one synthetic blur instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Kernel side length; odd.
    pub kernel_size: usize,
    /// Number of random-walk increments; 0 gives a centered delta.
    pub walk_steps: usize,
    /// Standard deviation of each walk increment, in pixels.
    pub step_std: f64,
    /// Noise standard deviation added to the blurred image.
    pub sigma: f64,
    pub seed: u64,
}

/// A ground-truth instance: sharp image, kernel, and observation related
/// by `y = clip(k (*) x + n)` under the valid-convolution convention.
#[derive(Debug, Clone)]
pub struct DatasetPair<T> {
    pub x_gt: Tensor<T>,
    pub k_gt: Tensor<T>,
    pub y: Tensor<T>,
    pub sigma: f64,
}

/// Motion-like blur kernel from a seeded 2D Gaussian random walk: the
/// trajectory is centered on its mean, each sub-pixel sample is splatted
/// bilinearly onto the `K x K` grid (samples escaping the grid are clamped
/// to the border), and the mass is normalized to one.
pub fn gen_kernel_randomwalk<T: Scalar>(spec: &SynthSpec) -> Tensor<T> {
    let k = spec.kernel_size;
    assert!(k % 2 == 1 && k >= 1, "kernel size must be odd, got {k}");
    let mut rng = rng::stream_rng(spec.seed, stream::KERNEL_WALK);
    let mut pts = Vec::with_capacity(spec.walk_steps + 1);
    let (mut py, mut px) = (0.0f64, 0.0f64);
    pts.push((py, px));
    for _ in 0..spec.walk_steps {
        let d = rng::normal_tensor::<f64>(&mut rng, &[2], spec.step_std);
        py += d.data()[0];
        px += d.data()[1];
        pts.push((py, px));
    }
    let n = pts.len() as f64;
    let my = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mx = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mid = (k - 1) as f64 / 2.0;
    let mut grid = vec![0.0f64; k * k];
    for (py, px) in pts {
        let gy = (py - my + mid).clamp(0.0, (k - 1) as f64);
        let gx = (px - mx + mid).clamp(0.0, (k - 1) as f64);
        let (i0, j0) = (gy.floor() as usize, gx.floor() as usize);
        let (fy, fx) = (gy - i0 as f64, gx - j0 as f64);
        for (di, dj, wgt) in [
            (0, 0, (1.0 - fy) * (1.0 - fx)),
            (0, 1, (1.0 - fy) * fx),
            (1, 0, fy * (1.0 - fx)),
            (1, 1, fy * fx),
        ] {
            if wgt > 0.0 {
                grid[(i0 + di) * k + j0 + dj] += wgt;
            }
        }
    }
    let total: f64 = grid.iter().sum();
    Tensor::from_vec(&[k, k], grid.into_iter().map(|v| T::of_f64(v / total)).collect())
}

/// Blur `x_gt` with `k_gt` (valid true convolution), add seeded
/// `N(0, sigma^2)` noise, and clip to `[0, 1]`. The recorded `sigma` is the
/// pre-clipping value.
pub fn synth_blur<T: Scalar>(x_gt: &Tensor<T>, k_gt: &Tensor<T>, sigma: f64, seed: u64) -> Result<DatasetPair<T>> {
    let (c, h, w) = x_gt.dims3();
    let (kh, kw) = k_gt.dims2();
    if kh != kw {
        return Err(Error::Config(format!("blur kernel must be square, got {kh}x{kw}")));
    }
    if h <= kh || w <= kw {
        return Err(Error::Config(format!(
            "image {h}x{w} must exceed the {kh}x{kw} kernel by at least one pixel per axis"
        )));
    }
    if sigma < 0.0 {
        return Err(Error::Config(format!("sigma must be non-negative, got {sigma}")));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut y = Tensor::zeros(&[c, oh, ow]);
    kernels::blur_valid_fwd(x_gt.data(), (c, h, w), k_gt.data(), kh, BlurBackend::Auto, y.data_mut());
    let noise = rng::normal_tensor::<T>(&mut rng::stream_rng(seed, stream::BLUR_NOISE), y.shape(), sigma);
    for (v, &n) in y.data_mut().iter_mut().zip(noise.data()) {
        *v = (*v + n).max(T::zero()).min(T::one());
    }
    Ok(DatasetPair { x_gt: x_gt.clone(), k_gt: k_gt.clone(), y, sigma })
}

/// Kernel plus observation in one call.
pub fn synth_pair<T: Scalar>(x_gt: &Tensor<T>, spec: &SynthSpec) -> Result<DatasetPair<T>> {
    let k_gt = gen_kernel_randomwalk::<T>(spec);
    synth_blur(x_gt, &k_gt, spec.sigma, spec.seed)
}

/// Noise standard deviation via the median absolute deviation of the
/// finest-scale diagonal Haar coefficients, `(a - b - c + d) / 2` over
/// non-overlapping 2x2 blocks, pooled across channels: `median(|d|) /
/// 0.6745`. Smooth image content mostly cancels in the diagonal
/// difference, so the estimate tracks the noise rather than the signal.
pub fn estimate_sigma<T: Scalar>(y: &Tensor<T>) -> f64 {
    let (c, h, w) = y.dims3();
    assert!(h >= 2 && w >= 2, "noise estimation needs at least 2x2, got {h}x{w}");
    let mut coeffs = Vec::with_capacity(c * (h / 2) * (w / 2));
    let d = y.data();
    for ci in 0..c {
        for bi in 0..h / 2 {
            for bj in 0..w / 2 {
                let at = |r: usize, s: usize| d[(ci * h + 2 * bi + r) * w + 2 * bj + s].as_f64();
                coeffs.push(((at(0, 0) - at(0, 1) - at(1, 0) + at(1, 1)) / 2.0).abs());
            }
        }
    }
    coeffs.sort_by(|a, b| a.partial_cmp(b).expect("finite coefficients"));
    let n = coeffs.len();
    let median = if n % 2 == 1 { coeffs[n / 2] } else { (coeffs[n / 2 - 1] + coeffs[n / 2]) / 2.0 };
    median / 0.6745
}

pub const SHARP_FILE: &str = "sharp.pfmx";
pub const BLURRY_FILE: &str = "blurry.pfmx";
pub const KERNEL_FILE: &str = "kernel.txt";
pub const META_FILE: &str = "meta.txt";

/// Write a pair into `dir` (created if missing): lossless float images,
/// the text kernel, and a `meta.txt` sidecar with `sigma` and, when known,
/// the generating `seed`.
pub fn save_pair<T: Scalar>(pair: &DatasetPair<T>, dir: &Path, seed: Option<u64>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_image_float(&dir.join(SHARP_FILE), &pair.x_gt)?;
    io::write_image_float(&dir.join(BLURRY_FILE), &pair.y)?;
    io::write_kernel(&dir.join(KERNEL_FILE), &pair.k_gt)?;
    let mut meta = format!("sigma={}\n", pair.sigma);
    if let Some(s) = seed {
        meta.push_str(&format!("seed={s}\n"));
    }
    let meta_path = dir.join(META_FILE);
    std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

/// Read a pair written by [`save_pair`] (or assembled by hand in the same
/// formats) and re-validate its invariants.
pub fn load_pair<T: Scalar>(dir: &Path) -> Result<DatasetPair<T>> {
    let x_gt: Tensor<T> = io::read_image(&dir.join(SHARP_FILE))?;
    let y: Tensor<T> = io::read_image(&dir.join(BLURRY_FILE))?;
    let k_gt: Tensor<T> = io::read_kernel(&dir.join(KERNEL_FILE))?;
    let meta_path = dir.join(META_FILE);
    let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut sigma = None;
    for line in meta.lines() {
        if let Some(v) = line.strip_prefix("sigma=") {
            sigma =
                Some(v.parse::<f64>().map_err(|_| Error::parse(&meta_path, format!("bad sigma value {v:?}")))?);
        }
    }
    let sigma = sigma.ok_or_else(|| Error::parse(&meta_path, "missing sigma= line"))?;
    let (min, sum_dev) = simplex_error(&k_gt);
    if min < -1e-9 || sum_dev > 1e-6 {
        return Err(Error::Contract(format!(
            "kernel in {} is off the simplex: min entry {min}, sum deviation {sum_dev}",
            dir.display()
        )));
    }
    let ((_, hx, wx), (_, hy, wy)) = (x_gt.dims3(), y.dims3());
    let (kh, _) = k_gt.dims2();
    if hy != hx + 1 - kh || wy != wx + 1 - kw_of(&k_gt) {
        return Err(Error::Contract(format!(
            "pair in {} is inconsistent: sharp {hx}x{wx}, kernel {kh}, blurry {hy}x{wy}",
            dir.display()
        )));
    }
    Ok(DatasetPair { x_gt, k_gt, y, sigma })
}

fn kw_of<T: Scalar>(k: &Tensor<T>) -> usize {
    k.dims2().1
}

/// Deterministic piecewise-flat grayscale test image: a seeded mosaic of
/// flat cells with levels across [0.05, 0.95], overlaid with one bright
/// disk, the whole layout varied by `variant`. Flat regions with sharp
/// edges are the regime the total-variation prior favors, and the dense
/// edge set gives restoration objectives plenty of contrast to work with,
/// which makes these cards good optimization targets in tests and
/// benchmarks.
pub fn test_card<T: Scalar>(h: usize, w: usize, variant: u64) -> Tensor<T> {
    assert!(h >= 16 && w >= 16, "test card needs at least 16x16, got {h}x{w}");
    let cell = (h.min(w) / 8).max(4);
    let (gh, gw) = (h.div_ceil(cell), w.div_ceil(cell));
    let mut rng = rng::stream_rng(variant, stream::TEST_IMAGE);
    let levels: Vec<f64> = (0..gh * gw).map(|_| rng::uniform::<f64>(&mut rng, 0.05, 0.95)).collect();
    let cy = rng::uniform::<f64>(&mut rng, 0.3, 0.7) * h as f64;
    let cx = rng::uniform::<f64>(&mut rng, 0.3, 0.7) * w as f64;
    let r = h.min(w) as f64 / 5.0;
    let disk = rng::uniform::<f64>(&mut rng, 0.8, 0.95);
    let mut img = Tensor::zeros(&[1, h, w]);
    for i in 0..h {
        for j in 0..w {
            let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
            let v = if d2 <= r * r { disk } else { levels[(i / cell) * gw + j / cell] };
            img.data_mut()[i * w + j] = T::of_f64(v);
        }
    }
    img
}
