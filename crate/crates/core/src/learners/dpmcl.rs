//! Alternating generalization and forgetting updates with a probe chain.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::LearnerConfig;
use super::model::{Model, Net, Part, TwoNet};
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::memory::ReplayMemory;
use crate::nn::{
    backprop, capped_joint_step, forward, loss_and_output_grad, LossKind, OutputGrad, ParamSet, StepReport, Tensor,
};
use crate::streams::Batcher;

/// Costs of one forgetting step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTriple {
    /// New-task cost of the generalization step.
    pub j_n: f64,
    pub j_p: f64,
    pub j_pn: f64,
    /// Combined cost at the end of the probe chain.
    pub j_pn_probe: f64,
}

/// One of the `kappa` iterations on a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub task: usize,
    pub j_n: f64,
    /// Absent while the memory is empty.
    pub costs: Option<CostTriple>,
    /// Combined cost before each probe update, then after the last one.
    pub probe_costs: Vec<f64>,
    pub generalization_lr: f64,
    pub generalization_cap: f64,
    pub forgetting_lr: Option<f64>,
    pub forgetting_cap: Option<f64>,
}

impl IterationRecord {
    /// Cost entering the Lyapunov trace: the combined cost when the
    /// forgetting step ran, the new-task cost otherwise.
    pub fn cost(&self) -> f64 {
        self.costs.map_or(self.j_n, |c| c.j_pn)
    }
}

/// Probe hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub zeta: usize,
    pub eta: f64,
    pub beta: f64,
    pub eps: f64,
    pub copy_optimizer: bool,
}

impl From<&LearnerConfig> for ProbeConfig {
    fn from(cfg: &LearnerConfig) -> Self {
        Self {
            zeta: cfg.zeta,
            eta: cfg.eta,
            beta: cfg.beta,
            eps: cfg.eps,
            copy_optimizer: cfg.copy_probe_optimizer,
        }
    }
}

/// Gradients of `J_P + eta (J_PN - J_PN(probe))` for one forgetting step.
#[derive(Debug, Clone)]
pub struct ForgettingGradients {
    /// `J_P + eta (J_PN - J_PN(probe))`.
    pub objective: f64,
    pub j_p: f64,
    pub j_pn: f64,
    pub j_pn_probe: f64,
    pub probe_costs: Vec<f64>,
    pub rep: ParamSet,
    pub pred: ParamSet,
    /// Feature gradients of the three branches over the combined batch
    /// (memory rows first). The `J_P` branch is zero on the new rows.
    pub features_p: Tensor,
    pub features_pn: Tensor,
    pub features_probe: Tensor,
    /// The probe network after its chain.
    pub probe: ParamSet,
}

impl ForgettingGradients {
    /// The probe-difference scalar `J_PN - J_PN(probe)`.
    pub fn third_term(&self) -> f64 {
        self.j_pn - self.j_pn_probe
    }
}

fn output_grad_scaled(g: OutputGrad, s: f64) -> OutputGrad {
    match g {
        OutputGrad::Output(mut t) => {
            t.scale(s);
            OutputGrad::Output(t)
        }
        OutputGrad::Logits(mut t) => {
            t.scale(s);
            OutputGrad::Logits(t)
        }
    }
}

/// Forgetting-step gradients for memory batch `b_p` and new batch `b_n`.
/// Never mutates `net`.
pub fn forgetting_gradients(
    net: &TwoNet,
    b_p: &Dataset,
    b_n: &Dataset,
    loss: LossKind,
    probe_cfg: ProbeConfig,
) -> Result<ForgettingGradients> {
    let n_p = b_p.len();
    let b_pn = b_p.concat(b_n)?;
    let (features, rep_cache) = net.rep.forward(&b_pn.x)?;
    let pred = &net.pred;
    let head = pred.spec.output_activation();
    let eta = probe_cfg.eta;

    // J_P on the memory rows of the shared features.
    let idx_p: Vec<usize> = (0..n_p).collect();
    let features_p_in = features.select_rows(&idx_p);
    let (_, cache_p) = forward(&pred.spec, &pred.params, &features_p_in)?;
    let (j_p, up_p) = loss_and_output_grad(loss, head, cache_p.output(), cache_p.logits(), b_p.y.as_ref())?;
    let grad_p = backprop(&pred.spec, &pred.params, &cache_p, up_p, true)?;

    // Live combined branch, scaled by eta.
    let (_, cache_pn) = forward(&pred.spec, &pred.params, &features)?;
    let (j_pn, up_pn) = loss_and_output_grad(loss, head, cache_pn.output(), cache_pn.logits(), b_pn.y.as_ref())?;
    let grad_pn = backprop(&pred.spec, &pred.params, &cache_pn, output_grad_scaled(up_pn, eta), true)?;

    // Probe chain on a detached copy with the features held fixed.
    let mut probe = Net {
        spec: pred.spec.clone(),
        params: pred.params.clone(),
        opt: if probe_cfg.copy_optimizer { pred.opt.clone() } else { pred.opt.reset_like() },
    };
    let mut probe_costs = Vec::with_capacity(probe_cfg.zeta + 1);
    for _ in 0..probe_cfg.zeta {
        let (_, cache) = probe.forward(&features)?;
        let (j, up) = loss_and_output_grad(loss, head, cache.output(), cache.logits(), b_pn.y.as_ref())?;
        probe_costs.push(j);
        let g = backprop(&probe.spec, &probe.params, &cache, up, true)?;
        capped_joint_step(&mut [(&mut probe.params, &mut probe.opt, &g.params)], probe_cfg.beta, probe_cfg.eps)?;
    }
    let (_, cache_b) = probe.forward(&features)?;
    let (j_pn_probe, up_b) = loss_and_output_grad(loss, head, cache_b.output(), cache_b.logits(), b_pn.y.as_ref())?;
    probe_costs.push(j_pn_probe);
    let grad_b = backprop(&probe.spec, &probe.params, &cache_b, output_grad_scaled(up_b, -eta), false)?;

    // dF = dF_P + (dF_PN + dF_probe); the bracket is formed first so that
    // identical branches cancel exactly.
    let width = features.cols();
    let mut features_p = Tensor::zeros(features.shape());
    features_p.data_mut()[..n_p * width].copy_from_slice(grad_p.input_grad.data());
    let mut d_features = grad_pn.input_grad.clone();
    d_features.add_assign(&grad_b.input_grad);
    d_features.add_assign(&features_p);

    let rep_grad = backprop(&net.rep.spec, &net.rep.params, &rep_cache, OutputGrad::Output(d_features), true)?.params;
    let mut pred_grad = grad_p.params;
    pred_grad.add_assign(&grad_pn.params);

    Ok(ForgettingGradients {
        objective: j_p + eta * (j_pn - j_pn_probe),
        j_p,
        j_pn,
        j_pn_probe,
        probe_costs,
        rep: rep_grad,
        pred: pred_grad,
        features_p,
        features_pn: grad_pn.input_grad,
        features_probe: grad_b.input_grad,
        probe: probe.params,
    })
}

fn check_finite(v: f64, term: &'static str, task: usize, iteration: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteCost { term, task, iteration })
    }
}

/// Trains on `task` for `kappa` iterations, then stores its training split
/// in `memory`. Returns one record per iteration.
pub fn dpmcl_observe<R: Rng + ?Sized>(
    model: &mut Model,
    task: &Task,
    memory: &mut ReplayMemory,
    cfg: &LearnerConfig,
    rng: &mut R,
) -> Result<Vec<IterationRecord>> {
    let Model::Composed(net) = model else {
        return Err(Error::InvalidArgument("this learner needs a representation/prediction pair".into()));
    };
    let loss = task.kind.loss();
    let mut batcher = Batcher::new(task.train.len(), cfg.batch_size, rng.random())?;
    let probe_cfg = ProbeConfig::from(cfg);
    let mut records = Vec::with_capacity(cfg.kappa);
    for it in 0..cfg.kappa {
        let b_n = batcher.next_batch(&task.train);

        let (j_n, gen) = net.train_step(&b_n, loss, Part::All, cfg.beta, cfg.eps).map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFiniteCost { term: "J_N", task: task.id, iteration: it },
            e => e,
        })?;
        check_finite(j_n, "J_N", task.id, it)?;

        let mut record = IterationRecord {
            task: task.id,
            j_n,
            costs: None,
            probe_costs: Vec::new(),
            generalization_lr: gen.effective_lr,
            generalization_cap: gen.cap,
            forgetting_lr: None,
            forgetting_cap: None,
        };
        if !memory.is_empty() {
            let b_p = memory.sample_batch(cfg.batch_size, rng)?;
            let fg = forgetting_gradients(net, &b_p, &b_n, loss, probe_cfg)?;
            check_finite(fg.j_p, "J_P", task.id, it)?;
            check_finite(fg.j_pn, "J_PN", task.id, it)?;
            check_finite(fg.j_pn_probe, "J_PN(probe)", task.id, it)?;
            let report: StepReport = capped_joint_step(
                &mut [
                    (&mut net.rep.params, &mut net.rep.opt, &fg.rep),
                    (&mut net.pred.params, &mut net.pred.opt, &fg.pred),
                ],
                cfg.beta,
                cfg.eps,
            )?;
            record.costs = Some(CostTriple {
                j_n,
                j_p: fg.j_p,
                j_pn: fg.j_pn,
                j_pn_probe: fg.j_pn_probe,
            });
            record.probe_costs = fg.probe_costs;
            record.forgetting_lr = Some(report.effective_lr);
            record.forgetting_cap = Some(report.cap);
        }
        records.push(record);
    }
    memory.append_task(&task.train, task.id, rng)?;
    Ok(records)
}
