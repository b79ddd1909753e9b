use serde::{Deserialize, Serialize};

use super::{backward, batch_objective, TextPairBatch};
use crate::estimator::{EstimatorParams, RpcHyper};
use crate::par::Exec;
use crate::Result;

/// Outcome of a central-difference check over every scalar parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
}

/// Compares the analytic gradient with `(J(θ+h) - J(θ-h)) / 2h` per scalar.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn finite_difference_check(
    params: &EstimatorParams,
    batch: &TextPairBatch,
    hyper: &RpcHyper,
    step: f64,
) -> Result<GradCheck> {
    let analytic = backward(params, batch, hyper, Exec::Sequential)?
        .grads
        .to_dense(params);
    let mut probe = params.clone();
    let mut out = GradCheck {
        checked: 0,
        max_relative_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
    };
    for (t, grad) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = probe.tensors()[t].1[i];
            probe.tensors_mut()[t].1[i] = orig + step;
            let up = batch_objective(&probe, batch, hyper)?;
            probe.tensors_mut()[t].1[i] = orig - step;
            let down = batch_objective(&probe, batch, hyper)?;
            probe.tensors_mut()[t].1[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            if rel > out.max_relative_error {
                out.max_relative_error = rel;
                out.worst_tensor = probe.tensors()[t].0.to_string();
                out.worst_index = i;
            }
            out.checked += 1;
        }
    }
    Ok(out)
}
