//! Seeded, stream-split randomness. One user-visible seed fans out into
//! independent ChaCha streams, one per purpose, so e.g. the image noise
//! input and the kernel-network initialization never share draws even under
//! the same seed. All sampling goes through `f64` and is cast afterwards,
//! so a given seed produces the same underlying draws at either precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stream ids. Fixed: changing these changes every seeded artifact.
pub mod stream {
    pub const Z_X: u64 = 0;
    pub const Z_K: u64 = 1;
    pub const GX_PARAMS: u64 = 2;
    pub const GK_PARAMS: u64 = 3;
    pub const PERTURB: u64 = 4;
    pub const KERNEL_WALK: u64 = 5;
    pub const BLUR_NOISE: u64 = 6;
    pub const TEST_IMAGE: u64 = 7;
}

/// ChaCha generator for (seed, stream).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> T {
    T::of_f64(lo + (hi - lo) * rng.random::<f64>())
}

/// Tensor of uniform draws in `[lo, hi)`.
pub fn uniform_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| uniform(rng, lo, hi)).collect();
    Tensor::from_vec(shape, data)
}

/// Tensor of `N(0, std^2)` draws.
pub fn normal_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    if std == 0.0 {
        return Tensor::zeros(shape);
    }
    let dist = Normal::new(0.0, std).expect("normal std must be finite and non-negative");
    let data = (0..numel).map(|_| T::of_f64(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data)
}
