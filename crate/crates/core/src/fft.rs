//! FFT-backed 2D correlations for the large-kernel blur path. All products
//! are computed on a single `Hx x Wx` grid (the enlarged image size), which
//! is exactly big enough that circular wrap-around never touches nonzero
//! samples; the results are therefore equal to the direct sums up to
//! rounding, not approximations.

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use crate::scalar::Scalar;

/// In-place 2D FFT via row passes and column passes.
fn fft2<T: Scalar>(buf: &mut [Complex<T>], (h, w): (usize, usize), dir: FftDirection) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(w, dir);
    let col_fft = planner.plan_fft(h, dir);
    for r in 0..h {
        row_fft.process(&mut buf[r * w..(r + 1) * w]);
    }
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = buf[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            buf[r * w + c] = col[r];
        }
    }
}

fn to_complex<T: Scalar>(data: &[T], n: usize) -> Vec<Complex<T>> {
    let mut out = vec![Complex::new(T::zero(), T::zero()); n];
    for (o, &x) in out.iter_mut().zip(data) {
        o.re = x;
    }
    out
}

/// Place `src` (`h x w`) into a zeroed `hx x wx` grid at offset `(oy, ox)`.
fn embed<T: Scalar>(src: &[T], (h, w): (usize, usize), (hx, wx): (usize, usize), (oy, ox): (usize, usize)) -> Vec<Complex<T>> {
    let mut out = vec![Complex::new(T::zero(), T::zero()); hx * wx];
    for i in 0..h {
        for j in 0..w {
            out[(i + oy) * wx + (j + ox)].re = src[i * w + j];
        }
    }
    out
}

/// Valid-region true convolution of one `hx x wx` channel with a `k x k`
/// kernel; output is `(hx-k+1) x (wx-k+1)`.
pub fn valid_true_conv<T: Scalar>(x: &[T], (hx, wx): (usize, usize), kernel: &[T], k: usize) -> Vec<T> {
    let n = hx * wx;
    let mut fx = to_complex(x, n);
    let mut fk = embed(kernel, (k, k), (hx, wx), (0, 0));
    fft2(&mut fx, (hx, wx), FftDirection::Forward);
    fft2(&mut fk, (hx, wx), FftDirection::Forward);
    for (a, b) in fx.iter_mut().zip(&fk) {
        *a = *a * *b;
    }
    fft2(&mut fx, (hx, wx), FftDirection::Inverse);
    let scale = T::one() / T::of_f64(n as f64);
    let (h, w) = (hx - k + 1, wx - k + 1);
    let mut out = vec![T::zero(); h * w];
    for i in 0..h {
        for j in 0..w {
            // Circular convolution equals linear convolution away from the
            // first k-1 rows/columns.
            out[i * w + j] = fx[(i + k - 1) * wx + (j + k - 1)].re * scale;
        }
    }
    out
}

/// Adjoint of `valid_true_conv` w.r.t. the image: spreads an `h x w`
/// upstream gradient back onto the `(h+k-1) x (w+k-1)` image grid.
pub fn full_true_corr<T: Scalar>(dy: &[T], (h, w): (usize, usize), kernel: &[T], k: usize) -> Vec<T> {
    let (hx, wx) = (h + k - 1, w + k - 1);
    let n = hx * wx;
    // dy sits at offset k-1 so that the correlation below reads zeros
    // wherever it would otherwise wrap.
    let mut fd = embed(dy, (h, w), (hx, wx), (k - 1, k - 1));
    let mut fk = embed(kernel, (k, k), (hx, wx), (0, 0));
    fft2(&mut fd, (hx, wx), FftDirection::Forward);
    fft2(&mut fk, (hx, wx), FftDirection::Forward);
    for (a, b) in fd.iter_mut().zip(&fk) {
        *a = *a * b.conj();
    }
    fft2(&mut fd, (hx, wx), FftDirection::Inverse);
    let scale = T::one() / T::of_f64(n as f64);
    fd.iter().map(|v| v.re * scale).collect()
}

/// Valid cross-correlation of an `hx x wx` channel with an `h x w` probe
/// (`h <= hx`, `w <= wx`); output is `(hx-h+1) x (wx-w+1)`. Used for the
/// kernel gradient, where the probe is the upstream gradient.
pub fn valid_corr<T: Scalar>(x: &[T], (hx, wx): (usize, usize), probe: &[T], (h, w): (usize, usize)) -> Vec<T> {
    let n = hx * wx;
    let mut fx = to_complex(x, n);
    let mut fp = embed(probe, (h, w), (hx, wx), (0, 0));
    fft2(&mut fx, (hx, wx), FftDirection::Forward);
    fft2(&mut fp, (hx, wx), FftDirection::Forward);
    for (a, b) in fx.iter_mut().zip(&fp) {
        *a = *a * b.conj();
    }
    fft2(&mut fx, (hx, wx), FftDirection::Inverse);
    let scale = T::one() / T::of_f64(n as f64);
    let (kh, kw) = (hx - h + 1, wx - w + 1);
    let mut out = vec![T::zero(); kh * kw];
    for i in 0..kh {
        for j in 0..kw {
            out[i * kw + j] = fx[i * wx + j].re * scale;
        }
    }
    out
}
