//! Restoration quality metrics. Blind deconvolution recovers the image and
//! kernel only up to a translation, so every comparison here goes through
//! an integer alignment search; PSNR and SSIM additionally crop a border
//! where valid-convolution runs leave no evidence.
//!
//! Conventions, pinned once and used everywhere:
//! - `align_shift` returns the `(dy, dx)` to *apply to the estimate*, i.e.
//!   the aligned estimate samples `est(i - dy, j - dx)`; ties keep `(0, 0)`.
//! - PSNR uses the minimum-MSE shift (which also maximizes PSNR by
//!   definition), so enabling alignment can never lower the score.
//! - All accumulation happens in `f64` regardless of the run precision.

use crate::scalar::{kahan_sum, Scalar};
use crate::solver::{self, Mode, RunConfig};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Reported PSNR for (numerically) identical images.
pub const PSNR_CEILING_DB: f64 = 300.0;
/// Reported Error Ratio when the reference restoration is a perfect match.
pub const ERROR_RATIO_CEILING: f64 = 1e9;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Everything `cmd_eval` reports for one restoration.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    pub kernel_mse: f64,
    /// Present only when the caller paid for the two restorations.
    pub error_ratio: Option<f64>,
    /// Alignment applied to the image estimate for PSNR/SSIM.
    pub shift: (isize, isize),
}

/// Integer shift within `±max_shift` that maximizes the cross-correlation
/// of `est` against `reference`; the aligned estimate is `est(i - dy, j -
/// dx)`. Ties keep the first candidate in scan order, so exact ties with
/// the identity yield `(0, 0)`.
pub fn align_shift<T: Scalar>(est: &Tensor<T>, reference: &Tensor<T>, max_shift: usize) -> (isize, isize) {
    crate::tensor::assert_same_shape("align_shift inputs", est.shape(), reference.shape());
    let m = max_shift as isize;
    let mut best = correlation(est, reference, 0, 0);
    let mut best_shift = (0, 0);
    for dy in -m..=m {
        for dx in -m..=m {
            if (dy, dx) == (0, 0) {
                continue;
            }
            let score = correlation(est, reference, dy, dx);
            if score > best {
                best = score;
                best_shift = (dy, dx);
            }
        }
    }
    best_shift
}

/// `sum reference(i, j) * est(i - dy, j - dx)` over the overlap.
fn correlation<T: Scalar>(est: &Tensor<T>, reference: &Tensor<T>, dy: isize, dx: isize) -> f64 {
    let (c, h, w) = reference.dims3();
    let (ed, rd) = (est.data(), reference.data());
    let mut terms = Vec::new();
    for ci in 0..c {
        for i in 0..h as isize {
            let si = i - dy;
            if si < 0 || si >= h as isize {
                continue;
            }
            for j in 0..w as isize {
                let sj = j - dx;
                if sj < 0 || sj >= w as isize {
                    continue;
                }
                let r = rd[(ci * h + i as usize) * w + j as usize].as_f64();
                let e = ed[(ci * h + si as usize) * w + sj as usize].as_f64();
                terms.push(r * e);
            }
        }
    }
    kahan_sum(terms.into_iter())
}

/// MSE between the border-cropped reference interior and the estimate
/// sampled at `(dy, dx)`; all sampled indices stay inside the estimate
/// because `|dy|, |dx| <= border`.
fn shifted_mse<T: Scalar>(est: &Tensor<T>, reference: &Tensor<T>, border: usize, dy: isize, dx: isize) -> f64 {
    let (c, h, w) = reference.dims3();
    let (ed, rd) = (est.data(), reference.data());
    let mut terms = Vec::with_capacity(c * (h - 2 * border) * (w - 2 * border));
    for ci in 0..c {
        for i in border..h - border {
            for j in border..w - border {
                let r = rd[(ci * h + i) * w + j].as_f64();
                let si = (i as isize - dy) as usize;
                let sj = (j as isize - dx) as usize;
                let e = ed[(ci * h + si) * w + sj].as_f64();
                terms.push((r - e) * (r - e));
            }
        }
    }
    let n = terms.len();
    kahan_sum(terms.into_iter()) / n as f64
}

/// Minimum MSE over shifts within `±search` and the shift achieving it;
/// `search <= border` keeps every sample in bounds.
fn best_shift_mse<T: Scalar>(
    est: &Tensor<T>,
    reference: &Tensor<T>,
    border: usize,
    search: usize,
) -> (f64, (isize, isize)) {
    crate::tensor::assert_same_shape("psnr inputs", est.shape(), reference.shape());
    let (_, h, w) = reference.dims3();
    assert!(h > 2 * border && w > 2 * border, "border {border} leaves no pixels of a {h}x{w} image");
    assert!(search <= border, "shift search {search} exceeds border {border}");
    let mut best = shifted_mse(est, reference, border, 0, 0);
    let mut best_shift = (0, 0);
    let s = search as isize;
    for dy in -s..=s {
        for dx in -s..=s {
            if (dy, dx) == (0, 0) {
                continue;
            }
            let mse = shifted_mse(est, reference, border, dy, dx);
            if mse < best {
                best = mse;
                best_shift = (dy, dx);
            }
        }
    }
    (best, best_shift)
}

fn mse_to_db(mse: f64) -> f64 {
    if mse < 1e-30 {
        PSNR_CEILING_DB
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]` (peak 1), after
/// cropping `border_crop` pixels on every side and, if `align` is set,
/// searching shifts within `±border_crop` for the minimum MSE.
pub fn psnr<T: Scalar>(est: &Tensor<T>, reference: &Tensor<T>, align: bool, border_crop: usize) -> f64 {
    let search = if align { border_crop } else { 0 };
    mse_to_db(best_shift_mse(est, reference, border_crop, search).0)
}

/// Mean structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1), valid positions
/// only; channels are averaged. No alignment or crop is applied here.
pub fn ssim<T: Scalar>(est: &Tensor<T>, reference: &Tensor<T>) -> f64 {
    crate::tensor::assert_same_shape("ssim inputs", est.shape(), reference.shape());
    let (c, h, w) = reference.dims3();
    assert!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
    );
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut per_channel = Vec::with_capacity(c);
    for ci in 0..c {
        let mut scores = Vec::with_capacity((h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1));
        for top in 0..=h - SSIM_WINDOW {
            for left in 0..=w - SSIM_WINDOW {
                let at = |img: &Tensor<T>, r: usize, s: usize| img.data()[(ci * h + top + r) * w + left + s].as_f64();
                let mut mx = 0.0;
                let mut my = 0.0;
                for r in 0..SSIM_WINDOW {
                    for s in 0..SSIM_WINDOW {
                        mx += win[r][s] * at(est, r, s);
                        my += win[r][s] * at(reference, r, s);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for r in 0..SSIM_WINDOW {
                    for s in 0..SSIM_WINDOW {
                        let dx = at(est, r, s) - mx;
                        let dy = at(reference, r, s) - my;
                        vx += win[r][s] * dx * dx;
                        vy += win[r][s] * dy * dy;
                        cov += win[r][s] * dx * dy;
                    }
                }
                let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
                let den = (mx * mx + my * my + c1) * (vx + vy + c2);
                scores.push(num / den);
            }
        }
        let n = scores.len() as f64;
        per_channel.push(kahan_sum(scores.into_iter()) / n);
    }
    kahan_sum(per_channel.iter().copied()) / c as f64
}

fn gaussian_window() -> [[f64; SSIM_WINDOW]; SSIM_WINDOW] {
    let mut win = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (r, row) in win.iter_mut().enumerate() {
        for (s, v) in row.iter_mut().enumerate() {
            let d2 = (r as f64 - mid).powi(2) + (s as f64 - mid).powi(2);
            *v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            sum += *v;
        }
    }
    for row in &mut win {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    win
}

/// MSE between two kernels after centered zero-padding to a common size
/// and integer alignment; positions the shifted estimate leaves uncovered
/// count as zero.
pub fn kernel_mse_aligned<T: Scalar>(k_est: &Tensor<T>, k_gt: &Tensor<T>) -> f64 {
    let side = k_est.dims2().0.max(k_gt.dims2().0);
    let e = pad_centered(k_est, side);
    let g = pad_centered(k_gt, side);
    let e_img = e.reshaped(&[1, side, side]);
    let g_img = g.reshaped(&[1, side, side]);
    let (dy, dx) = align_shift(&e_img, &g_img, side / 2);
    let mut terms = Vec::with_capacity(side * side);
    for i in 0..side as isize {
        for j in 0..side as isize {
            let gt = g.data()[(i * side as isize + j) as usize].as_f64();
            let (si, sj) = (i - dy, j - dx);
            let est = if si >= 0 && si < side as isize && sj >= 0 && sj < side as isize {
                e.data()[(si * side as isize + sj) as usize].as_f64()
            } else {
                0.0
            };
            terms.push((gt - est) * (gt - est));
        }
    }
    kahan_sum(terms.into_iter()) / (side * side) as f64
}

fn pad_centered<T: Scalar>(k: &Tensor<T>, side: usize) -> Tensor<T> {
    let (kh, kw) = k.dims2();
    assert_eq!(kh, kw, "kernels must be square, got {kh}x{kw}");
    assert_eq!((side - kh) % 2, 0, "kernel sizes {kh} and {side} differ in parity");
    if kh == side {
        return k.clone();
    }
    let off = (side - kh) / 2;
    let mut out = Tensor::zeros(&[side, side]);
    for i in 0..kh {
        for j in 0..kw {
            out.data_mut()[(off + i) * side + off + j] = k.data()[i * kw + j];
        }
    }
    out
}

/// Ratio of restoration errors: a fixed-kernel run with the estimated
/// kernel versus one with the true kernel, both against the ground truth
/// with the usual aligned, border-cropped squared error. Identical kernels
/// give exactly 1; a vanishing reference error reports
/// [`ERROR_RATIO_CEILING`].
pub fn error_ratio<T: Scalar>(
    y: &Tensor<T>,
    k_est: &Tensor<T>,
    k_gt: &Tensor<T>,
    x_gt: &Tensor<T>,
    cfg: &RunConfig,
) -> Result<f64> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::FixedKernel;
    let border = cfg.gk.kernel_size.div_ceil(2);
    let num = restoration_error(y, k_est, x_gt, &cfg, border)?;
    let den = restoration_error(y, k_gt, x_gt, &cfg, border)?;
    if num == den {
        return Ok(1.0);
    }
    if den == 0.0 {
        return Ok(ERROR_RATIO_CEILING);
    }
    Ok(num / den)
}

fn restoration_error<T: Scalar>(
    y: &Tensor<T>,
    kernel: &Tensor<T>,
    x_gt: &Tensor<T>,
    cfg: &RunConfig,
    border: usize,
) -> Result<f64> {
    let report = solver::run(y, Some(kernel), cfg, &mut |_, _| {})?;
    if let Some(t) = report.diverged_at {
        return Err(Error::Diverged { iter: t });
    }
    Ok(best_shift_mse(&report.image, x_gt, border, border).0)
}

/// PSNR, SSIM, and kernel MSE of one restoration against ground truth.
/// `border` should be half the kernel size, rounded up; the same crop and
/// shift feed both image metrics. The error ratio is left unset.
pub fn evaluate<T: Scalar>(
    x_est: &Tensor<T>,
    x_gt: &Tensor<T>,
    k_est: &Tensor<T>,
    k_gt: &Tensor<T>,
    border: usize,
) -> MetricsReport {
    let (mse, shift) = best_shift_mse(x_est, x_gt, border, border);
    let (est_c, gt_c) = aligned_interiors(x_est, x_gt, border, shift);
    MetricsReport {
        psnr: mse_to_db(mse),
        ssim: ssim(&est_c, &gt_c),
        kernel_mse: kernel_mse_aligned(k_est, k_gt),
        error_ratio: None,
        shift,
    }
}

/// The border-cropped reference interior and the estimate window shifted
/// by `(dy, dx)`, as two equal-shape tensors.
fn aligned_interiors<T: Scalar>(
    est: &Tensor<T>,
    reference: &Tensor<T>,
    border: usize,
    (dy, dx): (isize, isize),
) -> (Tensor<T>, Tensor<T>) {
    let (c, h, w) = reference.dims3();
    let (ih, iw) = (h - 2 * border, w - 2 * border);
    let mut e = Tensor::zeros(&[c, ih, iw]);
    let mut r = Tensor::zeros(&[c, ih, iw]);
    for ci in 0..c {
        for i in 0..ih {
            for j in 0..iw {
                let (ri, rj) = (border + i, border + j);
                let (si, sj) = ((ri as isize - dy) as usize, (rj as isize - dx) as usize);
                e.data_mut()[(ci * ih + i) * iw + j] = est.data()[(ci * h + si) * w + sj];
                r.data_mut()[(ci * ih + i) * iw + j] = reference.data()[(ci * h + ri) * w + rj];
            }
        }
    }
    (e, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::BlurBackend;
    use crate::rng;

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> Tensor<f64> {
        rng::uniform_tensor(&mut rng::stream_rng(seed, rng::stream::TEST_IMAGE), &[c, h, w], 0.0, 1.0)
    }

    /// `out(i, j) = img(i - dy, j - dx)`, zeros rolled in.
    fn shift_image(img: &Tensor<f64>, dy: isize, dx: isize) -> Tensor<f64> {
        let (c, h, w) = img.dims3();
        let mut out = Tensor::zeros(&[c, h, w]);
        for ci in 0..c {
            for i in 0..h as isize {
                for j in 0..w as isize {
                    let (si, sj) = (i - dy, j - dx);
                    if si >= 0 && si < h as isize && sj >= 0 && sj < w as isize {
                        out.data_mut()[(ci as isize * h as isize + i) as usize * w + j as usize] =
                            img.data()[(ci * h + si as usize) * w + sj as usize];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn align_shift_finds_constructed_shifts() {
        let img = random_image(1, 1, 24, 24);
        assert_eq!(align_shift(&img, &img, 3), (0, 0));
        // est = ref displaced by (2, -1); the returned shift undoes it.
        let est = shift_image(&img, 2, -1);
        assert_eq!(align_shift(&est, &img, 3), (-2, 1));
        // A little noise must not distract the argmax.
        let noisy = {
            let n = rng::normal_tensor::<f64>(&mut rng::stream_rng(9, 0), est.shape(), 1e-3);
            let data = est.data().iter().zip(n.data()).map(|(&a, &b)| a + b).collect();
            Tensor::from_vec(est.shape(), data)
        };
        assert_eq!(align_shift(&noisy, &img, 3), (-2, 1));
    }

    #[test]
    fn psnr_hits_the_ceiling_on_identical_images() {
        let img = random_image(2, 1, 20, 20);
        assert_eq!(psnr(&img, &img, false, 2), PSNR_CEILING_DB);
    }

    #[test]
    fn psnr_matches_the_analytic_offset_value() {
        let base = rng::uniform_tensor::<f64>(&mut rng::stream_rng(3, 0), &[1, 16, 16], 0.0, 0.9);
        let off = base.map(|v| v + 0.1);
        let db = psnr(&off, &base, false, 2);
        assert!((db - 20.0).abs() < 1e-9, "expected 20 dB for a 0.1 offset, got {db}");
    }

    #[test]
    fn alignment_recovers_a_shifted_image_exactly() {
        let img = random_image(4, 1, 18, 18);
        let est = shift_image(&img, 1, 0);
        assert_eq!(psnr(&est, &img, true, 1), PSNR_CEILING_DB);
    }

    #[test]
    fn psnr_is_symmetric_without_alignment() {
        let a = random_image(5, 2, 15, 13);
        let b = random_image(6, 2, 15, 13);
        assert_eq!(psnr(&a, &b, false, 2), psnr(&b, &a, false, 2));
    }

    #[test]
    fn alignment_never_lowers_psnr() {
        for seed in 0..10 {
            let a = random_image(100 + seed, 1, 17, 19);
            let b = random_image(200 + seed, 1, 17, 19);
            let (on, off) = (psnr(&a, &b, true, 3), psnr(&a, &b, false, 3));
            assert!(on >= off - 1e-9, "alignment worsened psnr at seed {seed}: {on} < {off}");
        }
    }

    #[test]
    fn ssim_is_exactly_one_on_identical_images() {
        let img = random_image(7, 1, 16, 16);
        assert_eq!(ssim(&img, &img), 1.0);
        let color = random_image(8, 3, 12, 14);
        assert_eq!(ssim(&color, &color), 1.0);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        for seed in 0..6 {
            let a = random_image(300 + seed, 1, 14, 14);
            let b = random_image(400 + seed, 1, 14, 14);
            let (ab, ba) = (ssim(&a, &b), ssim(&b, &a));
            assert!((ab - ba).abs() < 1e-12, "ssim asymmetric: {ab} vs {ba}");
            assert!(ab.abs() <= 1.0 + 1e-12, "|ssim| > 1: {ab}");
        }
    }

    #[test]
    fn inverted_checkerboard_scores_negative_ssim() {
        let mut board = Tensor::zeros(&[1, 16, 16]);
        for i in 0..16 {
            for j in 0..16 {
                board.data_mut()[i * 16 + j] = ((i + j) % 2) as f64;
            }
        }
        let inverted = board.map(|v| 1.0 - v);
        let s = ssim(&inverted, &board);
        assert!(s < 0.0, "anti-correlated structure should score negative, got {s}");
    }

    #[test]
    fn kernel_mse_is_zero_for_identical_and_shifted_kernels() {
        // Support kept interior so a one-pixel roll loses nothing.
        let mut k = Tensor::zeros(&[5, 5]);
        k.data_mut()[2 * 5 + 2] = 0.5;
        k.data_mut()[2 * 5 + 3] = 0.3;
        k.data_mut()[1 * 5 + 2] = 0.2;
        assert_eq!(kernel_mse_aligned(&k, &k), 0.0);
        let rolled = shift_image(&k.reshaped(&[1, 5, 5]), 1, 0).reshaped(&[5, 5]);
        assert_eq!(kernel_mse_aligned(&rolled, &k), 0.0);
    }

    #[test]
    fn kernel_mse_matches_hand_arithmetic_for_delta_vs_uniform() {
        let mut delta = Tensor::zeros(&[3, 3]);
        delta.data_mut()[4] = 1.0;
        let uniform = Tensor::filled(&[3, 3], 1.0 / 9.0);
        let got = kernel_mse_aligned(&delta, &uniform);
        let expected = ((1.0 - 1.0 / 9.0f64).powi(2) + 8.0 * (1.0 / 9.0f64).powi(2)) / 9.0;
        assert!((got - expected).abs() < 1e-15, "got {got}, expected {expected}");
        assert!((expected - 8.0 / 81.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_mse_is_invariant_to_a_common_shift() {
        let mut a = Tensor::zeros(&[5, 5]);
        a.data_mut()[2 * 5 + 2] = 0.6;
        a.data_mut()[2 * 5 + 1] = 0.4;
        let mut b = Tensor::zeros(&[5, 5]);
        b.data_mut()[2 * 5 + 2] = 0.3;
        b.data_mut()[1 * 5 + 2] = 0.7;
        let base = kernel_mse_aligned(&a, &b);
        let a2 = shift_image(&a.reshaped(&[1, 5, 5]), 0, 1).reshaped(&[5, 5]);
        let b2 = shift_image(&b.reshaped(&[1, 5, 5]), 0, 1).reshaped(&[5, 5]);
        let moved = kernel_mse_aligned(&a2, &b2);
        assert!((base - moved).abs() < 1e-12, "{base} vs {moved}");
    }

    #[test]
    fn kernel_mse_pads_mismatched_sizes() {
        let mut delta = Tensor::zeros(&[3, 3]);
        delta.data_mut()[4] = 1.0;
        let uniform = Tensor::filled(&[5, 5], 1.0 / 25.0);
        let got = kernel_mse_aligned(&delta, &uniform);
        let expected = ((1.0 - 1.0 / 25.0f64).powi(2) + 24.0 * (1.0 / 25.0f64).powi(2)) / 25.0;
        assert!((got - expected).abs() < 1e-15, "got {got}, expected {expected}");
    }

    #[test]
    fn evaluate_bundles_the_image_and_kernel_metrics() {
        let img = random_image(11, 1, 20, 20);
        let mut k = Tensor::zeros(&[3, 3]);
        k.data_mut()[4] = 1.0;
        let report = evaluate(&img, &img, &k, &k, 2);
        assert_eq!(report.psnr, PSNR_CEILING_DB);
        assert_eq!(report.ssim, 1.0);
        assert_eq!(report.kernel_mse, 0.0);
        assert_eq!(report.shift, (0, 0));
        assert_eq!(report.error_ratio, None);
    }

    /// The error-ratio anchor: with the true kernel in both slots the two
    /// restorations are the same run, so the ratio is exactly one.
    #[test]
    fn error_ratio_is_exactly_one_for_the_true_kernel() {
        let (h, w) = (18, 18);
        let mut x_gt = Tensor::<f32>::zeros(&[1, h, w]);
        for i in 0..h {
            for j in 0..w {
                x_gt.data_mut()[i * w + j] = 0.5 + 0.35 * ((i as f32 / 3.0).sin() * (j as f32 / 4.0).cos());
            }
        }
        let k = Tensor::from_vec(&[3, 3], vec![0.0f32, 0.15, 0.0, 0.15, 0.4, 0.15, 0.0, 0.15, 0.0]);
        let mut y = Tensor::zeros(&[1, h - 2, w - 2]);
        crate::kernels::blur_valid_fwd(x_gt.data(), (1, h, w), k.data(), 3, BlurBackend::Direct, y.data_mut());
        let mut cfg = RunConfig::desk(3, 1);
        cfg.iters = 30;
        cfg.snapshot_iters = vec![];
        let ratio = error_ratio(&y, &k, &k, &x_gt, &cfg).unwrap();
        assert_eq!(ratio, 1.0);
    }

    /// A delta "estimate" of a strong box blur restores much worse than the
    /// true kernel, so the ratio is clearly above one.
    #[test]
    fn error_ratio_penalizes_a_wrong_kernel() {
        let (h, w) = (24, 24);
        let mut x_gt = Tensor::<f32>::zeros(&[1, h, w]);
        for i in 0..h {
            for j in 0..w {
                // Piecewise-flat blocks give the blur something to destroy.
                let v = if (i / 6 + j / 6) % 2 == 0 { 0.85 } else { 0.15 };
                x_gt.data_mut()[i * w + j] = v;
            }
        }
        let k_gt = Tensor::filled(&[5, 5], 1.0f32 / 25.0);
        let mut delta = Tensor::zeros(&[5, 5]);
        delta.data_mut()[12] = 1.0f32;
        let mut y = Tensor::zeros(&[1, h - 4, w - 4]);
        crate::kernels::blur_valid_fwd(x_gt.data(), (1, h, w), k_gt.data(), 5, BlurBackend::Direct, y.data_mut());
        let mut cfg = RunConfig::desk(5, 1);
        cfg.iters = 150;
        cfg.snapshot_iters = vec![];
        let ratio = error_ratio(&y, &delta, &k_gt, &x_gt, &cfg).unwrap();
        assert!(ratio > 1.0, "delta kernel should restore worse than the truth, got ratio {ratio}");
    }
}
