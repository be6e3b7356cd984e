//! Error measures, aggregation over repetitions and trend smoothing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::learners::Learner;
use crate::nn::{loss_mse, Tensor};

/// Standard errors below this are reported as 0.
pub const SE_REPORT_FLOOR: f64 = 1e-3;
pub const SMOOTHING_SIGMA: f64 = 2.0;
pub const SMOOTHING_TRUNCATE: f64 = 4.0;

/// Mean squared error for value targets, `1 - accuracy` for labels.
pub fn prediction_error(outputs: &Tensor, targets: &Targets) -> Result<f64> {
    match targets {
        Targets::Values(y) => loss_mse(outputs, y),
        Targets::Labels { labels, classes } => {
            if outputs.rows() != labels.len() || outputs.cols() != *classes {
                return Err(Error::shape(
                    "classification outputs",
                    format!("[{}, {classes}]", labels.len()),
                    format!("{:?}", outputs.shape()),
                ));
            }
            if labels.is_empty() {
                return Err(Error::InvalidArgument("empty split".into()));
            }
            let correct = labels
                .iter()
                .enumerate()
                .filter(|&(r, &label)| argmax(outputs.row(r)) == label)
                .count();
            Ok(1.0 - correct as f64 / labels.len() as f64)
        }
    }
}

// First maximum wins ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Error of the learner on one split. Never mutates the learner.
pub fn task_error(learner: &Learner, split: &Dataset) -> Result<f64> {
    prediction_error(&learner.predict(&split.x)?, &split.y)
}

/// Mean of the test errors of every task seen so far, the newest included.
pub fn compute_cme(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("CME needs at least one task".into()));
    }
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Test error of the newest task.
pub fn compute_nte(learner: &Learner, task: &crate::data::Task) -> Result<f64> {
    task_error(learner, &task.test)
}

/// `s / sqrt(n)` with the `n - 1` sample deviation; 0 for fewer than two values.
pub fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    var.sqrt() / (n as f64).sqrt()
}

/// [`standard_error`] with small values reported as 0.
pub fn reported_standard_error(values: &[f64]) -> f64 {
    let se = standard_error(values);
    if se < SE_REPORT_FLOOR {
        0.0
    } else {
        se
    }
}

fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Gaussian-kernel convolution with the kernel cut at `4 sigma`, renormalized,
/// and the series mirrored about its edges (`d c b a | a b c d | d c b a`).
pub fn gaussian_smooth(series: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("cannot smooth an empty series".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (SMOOTHING_TRUNCATE * sigma + 0.5) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);
    let n = series.len();
    Ok((0..n as isize)
        .map(|i| {
            kernel
                .iter()
                .zip(-radius..=radius)
                .map(|(w, off)| w * series[reflect_index(i + off, n)])
                .sum()
        })
        .collect())
}

/// One evaluation after a task was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub dataset: String,
    pub run: usize,
    pub task: usize,
    pub cme: f64,
    pub nte: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: usize,
    pub mu_cme: f64,
    pub se_cme: f64,
    pub mu_nte: f64,
    pub se_nte: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub dataset: String,
    pub runs: usize,
    pub tasks: Vec<TaskSummary>,
    pub smoothed_cme: Vec<f64>,
    pub smoothed_nte: Vec<f64>,
}

impl MethodSummary {
    pub fn last(&self) -> Option<&TaskSummary> {
        self.tasks.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub methods: Vec<MethodSummary>,
}

impl Summary {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Mean and reported standard error per (method, dataset, task), expecting
/// `runs` rows for each.
pub fn aggregate(rows: &[MetricRow], runs: usize) -> Result<Summary> {
    let mut groups: BTreeMap<(&str, &str), BTreeMap<usize, (Vec<f64>, Vec<f64>)>> = BTreeMap::new();
    for r in rows {
        let per_task = groups.entry((&r.method, &r.dataset)).or_default();
        let (c, n) = per_task.entry(r.task).or_default();
        c.push(r.cme);
        n.push(r.nte);
    }
    let mut methods = Vec::with_capacity(groups.len());
    for ((method, dataset), per_task) in groups {
        let mut tasks = Vec::with_capacity(per_task.len());
        for (task, (cme, nte)) in per_task {
            if cme.len() != runs {
                return Err(Error::InvalidArgument(format!(
                    "{method}/{dataset} task {task} has {} rows, expected {runs}",
                    cme.len()
                )));
            }
            tasks.push(TaskSummary {
                task,
                mu_cme: cme.iter().sum::<f64>() / runs as f64,
                se_cme: reported_standard_error(&cme),
                mu_nte: nte.iter().sum::<f64>() / runs as f64,
                se_nte: reported_standard_error(&nte),
            });
        }
        let mu_cme: Vec<f64> = tasks.iter().map(|t| t.mu_cme).collect();
        let mu_nte: Vec<f64> = tasks.iter().map(|t| t.mu_nte).collect();
        methods.push(MethodSummary {
            method: method.to_string(),
            dataset: dataset.to_string(),
            runs,
            smoothed_cme: gaussian_smooth(&mu_cme, SMOOTHING_SIGMA)?,
            smoothed_nte: gaussian_smooth(&mu_nte, SMOOTHING_SIGMA)?,
            tasks,
        });
    }
    Ok(Summary { methods })
}
