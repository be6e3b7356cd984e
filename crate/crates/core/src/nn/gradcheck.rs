//! Central-difference gradient checking.

use super::loss::{backward, loss_from_cache, LossKind, TargetRef};
use super::mlp::{forward, MlpSpec, ParamSet};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor for relative errors, so gradients that are zero in
/// both routes compare as absolute differences.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub compared: usize,
    /// Coordinates whose `±h` probes crossed a ReLU kink.
    pub excluded: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.compared > 0 && self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` with central differences of `eval` over every scalar
/// of `params`. `eval` returns the loss and the ReLU on/off pattern; a probe
/// whose pattern differs from the unperturbed one is excluded.
pub fn finite_difference_check<F>(params: &[ParamSet], analytic: &[ParamSet], h: f64, mut eval: F) -> Result<GradCheckReport>
where
    F: FnMut(&[ParamSet]) -> Result<(f64, Vec<bool>)>,
{
    let mut work: Vec<ParamSet> = params.to_vec();
    let (_, base_pattern) = eval(&work)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        compared: 0,
        excluded: 0,
    };
    for (set, grads) in analytic.iter().enumerate() {
        let flat = grads.flatten();
        for (i, &a) in flat.iter().enumerate() {
            let orig = *work[set].scalar_mut(i);
            *work[set].scalar_mut(i) = orig + h;
            let (plus, pat_plus) = eval(&work)?;
            *work[set].scalar_mut(i) = orig - h;
            let (minus, pat_minus) = eval(&work)?;
            *work[set].scalar_mut(i) = orig;
            if pat_plus != base_pattern || pat_minus != base_pattern {
                report.excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            report.compared += 1;
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
        }
    }
    Ok(report)
}

/// Checks [`backward`] for a single network against central differences.
pub fn grad_check(
    spec: &MlpSpec,
    params: &ParamSet,
    x: &Tensor,
    target: TargetRef<'_>,
    kind: LossKind,
    h: f64,
) -> Result<GradCheckReport> {
    let (_, cache) = forward(spec, params, x)?;
    let grads = backward(spec, params, &cache, kind, target)?;
    finite_difference_check(std::slice::from_ref(params), &[grads.params], h, |p| {
        let (_, cache) = forward(spec, &p[0], x)?;
        Ok((loss_from_cache(spec, &cache, kind, target)?, cache.relu_pattern(spec)))
    })
}
