//! The optimization objective: mean squared error between the re-blurred
//! image estimate and the observation, plus a smoothed total-variation
//! penalty on the image estimate. Both terms are means over their element
//! counts so the balance between them does not drift with image size.

use crate::kernels::BlurBackend;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};

/// Smoothing constant inside the TV square root.
pub const TV_EPS: f64 = 1e-6;
/// Regularization weight as a fraction of the noise level.
pub const LAMBDA_SIGMA_FACTOR: f64 = 0.1;
/// Floor applied when the noise estimate is (near) zero, as on synthetic
/// noise-free data; keeps the penalty active without biasing noisy runs.
pub const LAMBDA_FLOOR: f64 = 1e-6;

/// Default regularization weight for a given noise standard deviation.
pub fn lambda_from_sigma(sigma: f64) -> f64 {
    (LAMBDA_SIGMA_FACTOR * sigma).max(LAMBDA_FLOOR)
}

/// Node handles of one objective evaluation on a tape.
pub struct Objective {
    /// Scalar loss to differentiate: `fidelity + lambda * tv`.
    pub loss: NodeId,
    /// Mean squared residual against the observation.
    pub fidelity: NodeId,
    /// Mean smoothed total variation of the image estimate (pre-`lambda`).
    pub tv: NodeId,
    /// Re-blurred estimate, same shape as the observation.
    pub reblurred: NodeId,
}

/// Record the objective for image node `x` (`[c, hx, wx]`), kernel node `k`
/// (`[K, K]`), and observation node `y` (`[c, hx-K+1, wx-K+1]`).
pub fn objective<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    k: NodeId,
    y: NodeId,
    lambda: f64,
    backend: BlurBackend,
) -> Objective {
    let reblurred = tape.blur_valid(x, k, backend);
    assert_eq!(
        tape.value(reblurred).shape(),
        tape.value(y).shape(),
        "observation shape vs re-blurred estimate"
    );
    let n_y = tape.value(y).numel();
    let n_x = tape.value(x).numel();
    let r = tape.sub(reblurred, y);
    let sq = tape.mul(r, r);
    let ssq = tape.sum_all(sq);
    let fidelity = tape.scale(ssq, T::of_f64(1.0 / n_y as f64));
    let tv_raw = tape.tv_smooth(x, T::of_f64(TV_EPS));
    let tv = tape.scale(tv_raw, T::of_f64(1.0 / n_x as f64));
    let reg = tape.scale(tv, T::of_f64(lambda));
    let loss = tape.add(fidelity, reg);
    Objective { loss, fidelity, tv, reblurred }
}

/// One loss evaluation, split into its terms. Assembled in `f64` regardless
/// of the run precision so that `total == fidelity + lambda * tv` holds
/// exactly after a round trip through text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub fidelity: f64,
    pub tv: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(fidelity: f64, tv: f64, lambda: f64) -> Self {
        LossBreakdown { fidelity, tv, lambda, total: fidelity + lambda * tv }
    }
}

/// Read an objective's terms off the tape.
pub fn breakdown<T: Scalar>(tape: &Tape<T>, obj: &Objective, lambda: f64) -> LossBreakdown {
    LossBreakdown::new(
        tape.value(obj.fidelity).item().as_f64(),
        tape.value(obj.tv).item().as_f64(),
        lambda,
    )
}
