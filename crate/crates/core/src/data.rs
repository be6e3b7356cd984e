//! Supervised sample collections and task splits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LossKind, TargetRef, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

impl TaskKind {
    pub fn loss(self) -> LossKind {
        match self {
            TaskKind::Regression => LossKind::Mse,
            TaskKind::Classification => LossKind::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Values(Tensor),
    Labels { labels: Vec<usize>, classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(t) => t.rows(),
            Targets::Labels { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_ref(&self) -> TargetRef<'_> {
        match self {
            Targets::Values(t) => TargetRef::Values(t),
            Targets::Labels { labels, .. } => TargetRef::Labels(labels),
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            Targets::Values(_) => TaskKind::Regression,
            Targets::Labels { .. } => TaskKind::Classification,
        }
    }

    /// Output width a network needs to fit these targets.
    pub fn width(&self) -> usize {
        match self {
            Targets::Values(t) => t.cols(),
            Targets::Labels { classes, .. } => *classes,
        }
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Values(t) => Targets::Values(t.select_rows(idx)),
            Targets::Labels { labels, classes } => Targets::Labels {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        }
    }

    fn compatible(&self, other: &Targets) -> bool {
        match (self, other) {
            (Targets::Values(a), Targets::Values(b)) => a.cols() == b.cols(),
            (Targets::Labels { classes: a, .. }, Targets::Labels { classes: b, .. }) => a == b,
            _ => false,
        }
    }

    fn row_strings(&self, i: usize) -> Vec<String> {
        match self {
            Targets::Values(t) => t.row(i).iter().map(|v| v.to_string()).collect(),
            Targets::Labels { labels, .. } => vec![labels[i].to_string()],
        }
    }

    fn header(&self) -> Vec<String> {
        match self {
            Targets::Values(t) => (0..t.cols()).map(|j| format!("y{j}")).collect(),
            Targets::Labels { .. } => vec!["label".to_string()],
        }
    }
}

/// Inputs (one row per sample) with matching targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Targets,
}

impl Dataset {
    pub fn new(x: Tensor, y: Targets) -> Result<Self> {
        if x.shape().len() != 2 {
            return Err(Error::shape("dataset inputs", "matrix", format!("{:?}", x.shape())));
        }
        if x.rows() != y.len() {
            return Err(Error::shape("dataset rows", x.rows(), y.len()));
        }
        if let Targets::Labels { labels, classes } = &y {
            if let Some(&label) = labels.iter().find(|&&l| l >= *classes) {
                return Err(Error::LabelOutOfRange { label, classes: *classes });
            }
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn kind(&self) -> TaskKind {
        self.y.kind()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: self.y.select(idx),
        }
    }

    /// True when `other` has the same feature and target layout.
    pub fn compatible(&self, other: &Dataset) -> bool {
        self.input_dim() == other.input_dim() && self.y.compatible(&other.y)
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if !self.compatible(other) {
            return Err(Error::shape(
                "dataset concat",
                format!("{} features, {} targets", self.input_dim(), self.y.width()),
                format!("{} features, {} targets", other.input_dim(), other.y.width()),
            ));
        }
        let x = Tensor::vstack(&[&self.x, &other.x])?;
        let y = match (&self.y, &other.y) {
            (Targets::Values(a), Targets::Values(b)) => Targets::Values(Tensor::vstack(&[a, b])?),
            (Targets::Labels { labels: a, classes }, Targets::Labels { labels: b, .. }) => Targets::Labels {
                labels: a.iter().chain(b).copied().collect(),
                classes: *classes,
            },
            _ => unreachable!("checked by compatible()"),
        };
        Ok(Dataset { x, y })
    }

    /// Overwrites row `i` with row `j` of `src`.
    pub(crate) fn set_row(&mut self, i: usize, src: &Dataset, j: usize) {
        self.x.row_mut(i).copy_from_slice(src.x.row(j));
        match (&mut self.y, &src.y) {
            (Targets::Values(a), Targets::Values(b)) => a.row_mut(i).copy_from_slice(b.row(j)),
            (Targets::Labels { labels: a, .. }, Targets::Labels { labels: b, .. }) => a[i] = b[j],
            _ => unreachable!("callers check compatibility"),
        }
    }

    pub(crate) fn csv_header(&self) -> Vec<String> {
        (0..self.input_dim())
            .map(|j| format!("x{j}"))
            .chain(self.y.header())
            .collect()
    }

    pub(crate) fn csv_row(&self, i: usize) -> Vec<String> {
        self.x
            .row(i)
            .iter()
            .map(|v| v.to_string())
            .chain(self.y.row_strings(i))
            .collect()
    }

    /// Writes features then targets, one sample per line, with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.csv_header())?;
        for i in 0..self.len() {
            w.write_record(self.csv_row(i))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// One task of a stream with its train/validation/test splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: usize,
    pub kind: TaskKind,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Task {
    pub fn input_dim(&self) -> usize {
        self.train.input_dim()
    }

    pub fn output_width(&self) -> usize {
        self.train.y.width()
    }
}

/// Sizes of the (train, validation, test) splits for `n` samples:
/// 20% each for validation and test, rounded down, the rest for training.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let held = n / 5;
    (n - 2 * held, held, held)
}

pub const MIN_SPLIT_SAMPLES: usize = 5;

/// Shuffles the samples with `seed` and partitions them 60/20/20.
pub fn split_task(id: usize, data: Dataset, seed: u64) -> Result<Task> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let n = data.len();
    if n < MIN_SPLIT_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "a task needs at least {MIN_SPLIT_SAMPLES} samples to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let (tr, va, _) = split_sizes(n);
    Ok(Task {
        id,
        kind: data.kind(),
        train: data.select(&order[..tr]),
        val: data.select(&order[tr..tr + va]),
        test: data.select(&order[tr + va..]),
    })
}

/// Writes `task_<k>_<split>.csv` files for every task into `dir`.
pub fn export_stream_csv(tasks: &[Task], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in tasks {
        for (name, split) in [("train", &t.train), ("val", &t.val), ("test", &t.test)] {
            split.write_csv(&dir.join(format!("task_{}_{}.csv", t.id, name)))?;
        }
    }
    Ok(())
}
