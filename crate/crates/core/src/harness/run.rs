//! Repeated learner runs over a task stream, and parameter sweeps.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::{aggregate, compute_cme, task_error, MetricRow, Summary};
use crate::data::Task;
use crate::error::{Error, Result};
use crate::learners::{IterationRecord, Learner, LearnerConfig, Method};
use crate::streams::{StreamKind, StreamSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum StreamSource {
    /// Regenerated for every run with seed `spec.seed + run`.
    Generated(StreamSpec),
    /// The same tasks for every run.
    Loaded { name: String, tasks: Arc<Vec<Task>> },
}

impl StreamSource {
    pub fn name(&self) -> &str {
        match self {
            StreamSource::Generated(spec) => match spec.kind {
                StreamKind::Sine(_) => "sine",
                StreamKind::Classification(_) => "synth-class",
            },
            StreamSource::Loaded { name, .. } => name,
        }
    }

    pub fn tasks_for_run(&self, run: usize) -> Result<Arc<Vec<Task>>> {
        match self {
            StreamSource::Generated(spec) => Ok(Arc::new(spec.with_seed(spec.seed.wrapping_add(run as u64)).generate()?)),
            StreamSource::Loaded { tasks, .. } => Ok(Arc::clone(tasks)),
        }
    }

    pub fn first_task(&self) -> Result<Task> {
        let tasks = self.tasks_for_run(0)?;
        tasks.first().cloned().ok_or_else(|| Error::InvalidArgument("empty stream".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub method: Method,
    pub stream: StreamSource,
    pub cfg: LearnerConfig,
    pub runs: usize,
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
}

/// How repetitions are scheduled. Without the `parallel` feature both
/// variants run sequentially.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// Everything one repetition produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub rows: Vec<MetricRow>,
    /// Training cost per update (per iteration for DPMCL).
    pub costs: Vec<f64>,
    /// DPMCL iteration records; empty for the baselines.
    pub iterations: Vec<IterationRecord>,
    pub learner: Learner,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<MetricRow>,
    pub summary: Summary,
    pub runs: Vec<RunRecord>,
}

impl ExperimentResult {
    /// Final-task mean CME and NTE.
    pub fn final_means(&self) -> (f64, f64) {
        let last = self.summary.methods[0].last().expect("at least one task");
        (last.mu_cme, last.mu_nte)
    }
}

/// Trains a fresh learner on the stream of repetition `run`.
pub fn run_once(spec: &RunSpec, run: usize) -> Result<RunRecord> {
    let tasks = spec.stream.tasks_for_run(run)?;
    let first = tasks.first().ok_or_else(|| Error::InvalidArgument("empty stream".into()))?;
    let seed = spec.base_seed.wrapping_add(run as u64);
    let mut learner = Learner::for_task(spec.method, spec.cfg.clone(), first, seed)?;
    let mut errors = Vec::with_capacity(tasks.len());
    let mut rows = Vec::with_capacity(tasks.len());
    let mut costs = Vec::new();
    let mut iterations = Vec::new();
    for (k, task) in tasks.iter().enumerate() {
        let report = learner.observe(task)?;
        if let Some(i) = report.costs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFiniteCost {
                term: "training cost",
                task: k,
                iteration: i,
            });
        }
        costs.extend(report.costs);
        iterations.extend(report.iterations);
        errors.clear();
        for seen in &tasks[..=k] {
            errors.push(task_error(&learner, &seen.test)?);
        }
        rows.push(MetricRow {
            method: spec.method.name().to_string(),
            dataset: spec.stream.name().to_string(),
            run,
            task: k,
            cme: compute_cme(&errors)?,
            nte: errors[k],
        });
    }
    Ok(RunRecord {
        run,
        rows,
        costs,
        iterations,
        learner,
    })
}

#[cfg(feature = "parallel")]
fn run_all(spec: &RunSpec, execution: Execution) -> Result<Vec<RunRecord>> {
    use rayon::prelude::*;
    match execution {
        Execution::Parallel => (0..spec.runs).into_par_iter().map(|r| run_once(spec, r)).collect(),
        Execution::Sequential => (0..spec.runs).map(|r| run_once(spec, r)).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_all(spec: &RunSpec, _execution: Execution) -> Result<Vec<RunRecord>> {
    (0..spec.runs).map(|r| run_once(spec, r)).collect()
}

pub fn run_experiment(spec: &RunSpec) -> Result<ExperimentResult> {
    run_experiment_with(spec, Execution::default())
}

pub fn run_experiment_with(spec: &RunSpec, execution: Execution) -> Result<ExperimentResult> {
    if spec.runs == 0 {
        return Err(Error::InvalidArgument("runs must be at least 1".into()));
    }
    spec.cfg.validate()?;
    if let Some(dir) = &spec.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let runs = run_all(spec, execution)?;
    let rows: Vec<MetricRow> = runs.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    let summary = aggregate(&rows, spec.runs)?;
    if let Some(dir) = &spec.output_dir {
        write_rows(&rows, &dir.join("rows.csv"))?;
        write_json(&summary, &dir.join("summary.json"))?;
    }
    Ok(ExperimentResult { rows, summary, runs })
}

/// `method,dataset,run,task,cme,nte`
pub fn write_rows(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Zeta,
    Kappa,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeta" => Ok(SweepParam::Zeta),
            "kappa" => Ok(SweepParam::Kappa),
            other => Err(Error::InvalidArgument(format!("cannot sweep {other:?}; use zeta or kappa"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: usize,
    pub final_cme: f64,
    pub final_nte: f64,
}

/// One experiment per value with everything else fixed. Each value writes
/// into `<out>/<param>_<value>` and the table goes to `<out>/sweep.csv`.
pub fn ablation_sweep(param: SweepParam, values: &[usize], spec: &RunSpec) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    let mut table = Vec::with_capacity(values.len());
    for &value in values {
        let mut s = spec.clone();
        match param {
            SweepParam::Zeta => s.cfg.zeta = value,
            SweepParam::Kappa => s.cfg.kappa = value,
        }
        let label = match param {
            SweepParam::Zeta => "zeta",
            SweepParam::Kappa => "kappa",
        };
        s.output_dir = spec.output_dir.as_ref().map(|d| d.join(format!("{label}_{value}")));
        let (final_cme, final_nte) = run_experiment(&s)?.final_means();
        table.push(SweepRow {
            param,
            value,
            final_cme,
            final_nte,
        });
    }
    if let Some(dir) = &spec.output_dir {
        let path = dir.join("sweep.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for row in &table {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(table)
}
