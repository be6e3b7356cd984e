//! Naive, replay and meta-learning baselines.
//!
//! Every Batcher built during one call shares a single seed drawn from the
//! learner's RNG, so runs that differ only in loop budgets see the same
//! batch order.

use rand::Rng;

use super::config::LearnerConfig;
use super::model::{Model, Part};
use crate::data::{Dataset, Task};
use crate::error::Result;
use crate::memory::ReplayMemory;
use crate::streams::Batcher;

/// Losses of the updates performed during one call.
pub type StepLosses = Vec<f64>;

fn run_steps(model: &mut Model, data: &Dataset, steps: usize, part: Part, seed: u64, cfg: &LearnerConfig, losses: &mut StepLosses) -> Result<()> {
    if steps == 0 {
        return Ok(());
    }
    let loss = data.kind().loss();
    let mut batcher = Batcher::new(data.len(), cfg.batch_size, seed)?;
    for _ in 0..steps {
        let batch = batcher.next_batch(data);
        let (j, _) = model.train_step(&batch, loss, part, cfg.beta, cfg.eps)?;
        losses.push(j);
    }
    Ok(())
}

/// New-task training rows followed by everything in the store.
fn combined(task: &Task, store: &ReplayMemory) -> Result<Dataset> {
    match store.contents() {
        Some(old) => task.train.concat(old),
        None => Ok(task.train.clone()),
    }
}

fn outer_data<'a>(task: &'a Task, cfg: &LearnerConfig) -> &'a Dataset {
    if cfg.outer_on_validation {
        &task.val
    } else {
        &task.train
    }
}

/// `N` steps on the new task only.
pub fn naive_observe<R: Rng + ?Sized>(model: &mut Model, task: &Task, cfg: &LearnerConfig, rng: &mut R) -> Result<StepLosses> {
    let seed: u64 = rng.random();
    let mut losses = Vec::with_capacity(cfg.n_steps);
    run_steps(model, &task.train, cfg.n_steps, Part::All, seed, cfg, &mut losses)?;
    Ok(losses)
}

/// `N` steps on the new task joined with the store, then the task is stored.
pub fn er_observe<R: Rng + ?Sized>(
    model: &mut Model,
    task: &Task,
    store: &mut ReplayMemory,
    cfg: &LearnerConfig,
    rng: &mut R,
) -> Result<StepLosses> {
    let seed: u64 = rng.random();
    let data = combined(task, store)?;
    let mut losses = Vec::with_capacity(cfg.n_steps);
    run_steps(model, &data, cfg.n_steps, Part::All, seed, cfg, &mut losses)?;
    store.append_task(&task.train, task.id, rng)?;
    Ok(losses)
}

/// Inner replay updates of `inner` networks followed by outer new-task
/// updates of `outer` networks. The adapted parameters are the live ones, so
/// each outer gradient is taken at the adapted point and applied in place.
fn meta_observe<R: Rng + ?Sized>(
    model: &mut Model,
    task: &Task,
    store: &mut ReplayMemory,
    cfg: &LearnerConfig,
    rng: &mut R,
    inner: Part,
    outer: Part,
) -> Result<StepLosses> {
    let seed: u64 = rng.random();
    let data = combined(task, store)?;
    let mut losses = Vec::with_capacity(cfg.n_meta + cfg.n_grad);
    run_steps(model, &data, cfg.n_meta, inner, seed, cfg, &mut losses)?;
    run_steps(model, outer_data(task, cfg), cfg.n_grad, outer, seed, cfg, &mut losses)?;
    store.append_task(&task.train, task.id, rng)?;
    Ok(losses)
}

pub fn oml_observe<R: Rng + ?Sized>(
    model: &mut Model,
    task: &Task,
    store: &mut ReplayMemory,
    cfg: &LearnerConfig,
    rng: &mut R,
) -> Result<StepLosses> {
    meta_observe(model, task, store, cfg, rng, Part::All, Part::All)
}

/// Inner loop adapts only the prediction network.
pub fn cml_observe<R: Rng + ?Sized>(
    model: &mut Model,
    task: &Task,
    store: &mut ReplayMemory,
    cfg: &LearnerConfig,
    rng: &mut R,
) -> Result<StepLosses> {
    meta_observe(model, task, store, cfg, rng, Part::Prediction, Part::All)
}

/// Inner loop adapts the body, outer loop the gate.
pub fn anml_observe<R: Rng + ?Sized>(
    model: &mut Model,
    task: &Task,
    store: &mut ReplayMemory,
    cfg: &LearnerConfig,
    rng: &mut R,
) -> Result<StepLosses> {
    meta_observe(model, task, store, cfg, rng, Part::Prediction, Part::Representation)
}
