//! Adagrad with a gradient-norm ceiling on the learning rate.

use serde::{Deserialize, Serialize};

use super::mlp::ParamSet;
use crate::error::{Error, Result};

pub const DEFAULT_OPT_EPS: f64 = 1e-10;

/// Largest admissible step size `1 / (beta * |g|^2 + eps)`.
pub fn alpha_cap(grad_sq_norm: f64, beta: f64, eps: f64) -> f64 {
    1.0 / (beta * grad_sq_norm + eps)
}

/// Continuous-time step size `(1 - |J_x| |dx|) / (beta |J_theta|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizeDiagnostic {
    pub alpha: f64,
    /// `|J_x| |dx| < 1`; when false the returned rate is not positive and
    /// the boundedness guarantee does not apply.
    pub stable: bool,
}

pub fn alpha_with_input_shift(
    grad_theta_norm: f64,
    grad_x_norm: f64,
    dx_norm: f64,
    beta: f64,
) -> Result<StepSizeDiagnostic> {
    if grad_theta_norm == 0.0 {
        return Err(Error::VanishingGradient);
    }
    let shift = grad_x_norm * dx_norm;
    Ok(StepSizeDiagnostic {
        alpha: (1.0 - shift) / (beta * grad_theta_norm),
        stable: shift < 1.0,
    })
}

/// Per-parameter squared-gradient accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdagradState {
    pub accumulators: ParamSet,
    pub base_lr: f64,
    pub opt_eps: f64,
}

/// What one optimizer step actually did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub grad_sq_norm: f64,
    pub cap: f64,
    pub effective_lr: f64,
}

impl AdagradState {
    pub fn new(like: &ParamSet, base_lr: f64) -> Self {
        Self {
            accumulators: like.zeros_like(),
            base_lr,
            opt_eps: DEFAULT_OPT_EPS,
        }
    }

    /// Fresh state with the same hyperparameters.
    pub fn reset_like(&self) -> Self {
        Self {
            accumulators: self.accumulators.zeros_like(),
            base_lr: self.base_lr,
            opt_eps: self.opt_eps,
        }
    }

    /// Applies `min(base_lr, step_cap) * g / (sqrt(acc) + opt_eps)` after
    /// accumulating `g^2`. Returns the scalar learning rate used.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, step_cap: f64) -> Result<f64> {
        if !params.same_structure(grads) || !params.same_structure(&self.accumulators) {
            return Err(Error::shape(
                "adagrad_step",
                "parameters, gradients and accumulators of equal structure",
                "incongruent sets",
            ));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient passed to adagrad_step".into()));
        }
        if !(step_cap > 0.0) {
            return Err(Error::InvalidArgument(format!("step cap must be positive, got {step_cap}")));
        }
        let lr = self.base_lr.min(step_cap);
        assert!(lr <= step_cap, "effective learning rate exceeds its cap");
        let eps = self.opt_eps;
        for ((p, g), acc) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.accumulators.tensors_mut())
        {
            for ((w, &gi), a) in p.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut()) {
                *a += gi * gi;
                *w -= lr * gi / (a.sqrt() + eps);
            }
        }
        Ok(lr)
    }
}

/// One Adagrad step on several networks sharing a single ceiling computed
/// from the squared norm of all their gradients together.
pub fn capped_joint_step(
    parts: &mut [(&mut ParamSet, &mut AdagradState, &ParamSet)],
    beta: f64,
    eps: f64,
) -> Result<StepReport> {
    let grad_sq_norm: f64 = parts.iter().map(|(_, _, g)| g.sq_norm()).sum();
    if !grad_sq_norm.is_finite() {
        return Err(Error::NonFinite("gradient norm".into()));
    }
    let cap = alpha_cap(grad_sq_norm, beta, eps);
    let mut effective_lr: f64 = 0.0;
    for (params, state, grads) in parts.iter_mut() {
        effective_lr = effective_lr.max(state.step(params, grads, cap)?);
    }
    assert!(effective_lr <= cap, "effective learning rate exceeds 1/(beta |g|^2 + eps)");
    Ok(StepReport {
        grad_sq_norm,
        cap,
        effective_lr,
    })
}
