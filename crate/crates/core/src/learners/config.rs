use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::EvictionPolicy;

/// Hyperparameters shared by all learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// Alternating generalization/forgetting iterations per task.
    pub kappa: usize,
    /// Probe-chain length.
    pub zeta: usize,
    /// Cost bound scaling the step-size ceiling.
    pub beta: f64,
    /// Guard in the step-size ceiling denominator.
    pub eps: f64,
    pub base_lr: f64,
    pub batch_size: usize,
    /// Update budget of Naive and ER.
    pub n_steps: usize,
    pub n_meta: usize,
    pub n_grad: usize,
    /// Capacity of the bounded task memory.
    pub memory_capacity: usize,
    /// Capacity of the baselines' combined store; `None` grows without bound.
    pub baseline_memory_capacity: Option<usize>,
    pub eviction: EvictionPolicy,
    /// Weight of the probe-difference term.
    pub eta: f64,
    pub hidden_units: usize,
    /// Uniform initialization half-width; `sqrt(1 / fan_in)` per layer when unset.
    #[serde(default)]
    pub init_scale: Option<f64>,
    /// Start every probe chain from the live optimizer accumulators instead
    /// of fresh ones.
    pub copy_probe_optimizer: bool,
    /// Feed the new task's validation split to the outer loops of OML, CML
    /// and ANML (training split otherwise).
    pub outer_on_validation: bool,
}

impl LearnerConfig {
    /// Incremental sine-wave settings.
    pub fn sine() -> Self {
        Self {
            kappa: 300,
            zeta: 2,
            beta: 1000.0,
            eps: 1e-8,
            base_lr: 1e-3,
            batch_size: 64,
            n_steps: 300,
            n_meta: 150,
            n_grad: 150,
            memory_capacity: 1000,
            baseline_memory_capacity: None,
            eviction: EvictionPolicy::Reservoir,
            eta: 1.0,
            hidden_units: 100,
            init_scale: None,
            copy_probe_optimizer: false,
            outer_on_validation: true,
        }
    }

    /// Desk-scale class-incremental settings (one class per task).
    pub fn classification() -> Self {
        Self {
            kappa: 300,
            zeta: 5,
            beta: 10.0,
            eps: 1e-8,
            base_lr: 1e-2,
            batch_size: 32,
            n_steps: 300,
            n_meta: 150,
            n_grad: 150,
            memory_capacity: 20_000,
            hidden_units: 100,
            ..Self::sine()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("batch_size", self.batch_size),
            ("memory_capacity", self.memory_capacity),
            ("hidden_units", self.hidden_units),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let positive_reals = [("beta", self.beta), ("eps", self.eps), ("base_lr", self.base_lr)];
        for (name, v) in positive_reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be a positive number, got {v}")));
            }
        }
        if let Some(s) = self.init_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!("init_scale must be a positive number, got {s}")));
            }
        }
        if !self.eta.is_finite() {
            return Err(Error::Config("eta must be finite".into()));
        }
        if self.baseline_memory_capacity == Some(0) {
            return Err(Error::Config("baseline_memory_capacity must be positive".into()));
        }
        Ok(())
    }

    /// Equal outer-update budgets: `kappa == N == N_meta + N_grad`.
    pub fn budgets_match(&self) -> bool {
        self.kappa == self.n_steps && self.n_steps == self.n_meta + self.n_grad
    }
}
