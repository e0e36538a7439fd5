//! Central-difference gradient checking. Runs in `f64` only: the checker is
//! the arbiter for every analytic backward pass, so it gets the precision.

use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for the per-coordinate relative error. Central
/// differences on an O(1)..O(10) loss resolve gradients only down to about
/// `eps * loss / step` ~ 1e-11; coordinates whose true gradient sits below
/// this floor would otherwise compare pure roundoff noise against itself
/// and report huge "relative" errors. A sign or scale bug on any coordinate
/// that matters still lands orders of magnitude above every tolerance used.
pub const DENOM_FLOOR: f64 = 1e-6;

/// Outcome of a gradient check: worst relative error and where it occurred.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_param: usize,
    pub worst_coord: usize,
}

/// Compare analytic gradients against central differences for a scalar loss
/// built by `build` from the given differentiable inputs.
///
/// `build` receives a tape plus one node per input tensor (in order) and
/// must return a scalar node. It is invoked repeatedly at perturbed points,
/// so it must be a pure function of the tape inputs. The relative error per
/// coordinate is `|a - n| / max(|a|, |n|, DENOM_FLOOR)`.
pub fn gradcheck<F>(build: F, inputs: &[Tensor<f64>], step: f64) -> GradCheck
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &ids);
    let grads = tape.backward(loss);
    let analytic: Vec<Tensor<f64>> =
        ids.iter().zip(inputs).map(|(&id, t)| grads.dense(id, t.shape())).collect();

    let eval = |point: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::inference();
        let ids: Vec<NodeId> = point.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids);
        tape.value(loss).item()
    };

    let mut check = GradCheck { max_rel_err: 0.0, worst_param: 0, worst_coord: 0 };
    let mut point = inputs.to_vec();
    for pi in 0..inputs.len() {
        for ci in 0..inputs[pi].numel() {
            let orig = point[pi].data()[ci];
            point[pi].data_mut()[ci] = orig + step;
            let up = eval(&point);
            point[pi].data_mut()[ci] = orig - step;
            let down = eval(&point);
            point[pi].data_mut()[ci] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi].data()[ci];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            if rel > check.max_rel_err {
                check = GradCheck { max_rel_err: rel, worst_param: pi, worst_coord: ci };
            }
        }
    }
    check
}
