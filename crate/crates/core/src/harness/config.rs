//! Flat key-value run settings read from a TOML file and merged with
//! command-line overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::run::{RunSpec, StreamSource};
use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::learners::{LearnerConfig, Method};
use crate::streams::{idx_class_stream, StreamSpec};

pub const DEFAULT_RUNS: usize = 5;

/// Every key is optional; later sources override earlier ones field by
/// field. Keys follow the rows of the hyperparameter table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub method: Option<String>,
    /// `sine`, `synth-class` or `idx`.
    pub dataset: Option<String>,
    pub total_runs: Option<usize>,
    pub seed: Option<u64>,
    pub stream_seed: Option<u64>,
    pub num_tasks: Option<usize>,
    pub samples_per_task: Option<usize>,
    pub out: Option<PathBuf>,

    pub learning_rate: Option<f64>,
    pub hidden_units: Option<usize>,
    pub input_size: Option<usize>,
    pub output_size: Option<usize>,
    pub kappa: Option<usize>,
    pub zeta: Option<usize>,
    pub n_meta: Option<usize>,
    pub n_grad: Option<usize>,
    pub n: Option<usize>,
    pub memory_length: Option<usize>,
    pub beta: Option<f64>,
    pub batch_size: Option<usize>,
    pub activation: Option<String>,
    pub optimizer: Option<String>,
    pub loss: Option<String>,

    pub eps: Option<f64>,
    pub eta: Option<f64>,
    pub init_scale: Option<f64>,
    pub baseline_memory_length: Option<usize>,
    pub copy_probe_optimizer: Option<bool>,
    pub outer_on_validation: Option<bool>,

    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub max_per_class: Option<usize>,
}

macro_rules! merge_fields {
    ($dst:ident, $src:ident, $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Values set in `over` replace those in `self`.
    pub fn merged(mut self, over: Settings) -> Self {
        merge_fields!(
            self, over, method, dataset, total_runs, seed, stream_seed, num_tasks, samples_per_task, out,
            learning_rate, hidden_units, input_size, output_size, kappa, zeta, n_meta, n_grad, n,
            memory_length, beta, batch_size, activation, optimizer, loss, eps, eta, init_scale,
            baseline_memory_length, copy_probe_optimizer, outer_on_validation, idx_images, idx_labels,
            max_per_class,
        );
        self
    }

    /// Learner hyperparameters: the dataset preset with overrides applied.
    pub fn learner_config(&self, kind: TaskKind) -> Result<LearnerConfig> {
        let mut cfg = match kind {
            TaskKind::Regression => LearnerConfig::sine(),
            TaskKind::Classification => LearnerConfig::classification(),
        };
        macro_rules! set {
            ($($key:ident => $field:ident),* $(,)?) => {
                $( if let Some(v) = self.$key { cfg.$field = v; } )*
            };
        }
        set!(
            learning_rate => base_lr,
            hidden_units => hidden_units,
            kappa => kappa,
            zeta => zeta,
            n_meta => n_meta,
            n_grad => n_grad,
            n => n_steps,
            memory_length => memory_capacity,
            beta => beta,
            batch_size => batch_size,
            eps => eps,
            eta => eta,
            copy_probe_optimizer => copy_probe_optimizer,
            outer_on_validation => outer_on_validation,
        );
        if self.init_scale.is_some() {
            cfg.init_scale = self.init_scale;
        }
        if self.baseline_memory_length.is_some() {
            cfg.baseline_memory_capacity = self.baseline_memory_length;
        }
        let expect = |key: &str, given: &Option<String>, want: &[&str]| -> Result<()> {
            match given {
                Some(v) if !want.iter().any(|w| v.eq_ignore_ascii_case(w)) => Err(Error::Config(format!(
                    "{key} = {v:?} is not supported here (expected {})",
                    want.join(" or ")
                ))),
                _ => Ok(()),
            }
        };
        expect("optimizer", &self.optimizer, &["adagrad"])?;
        match kind {
            TaskKind::Regression => {
                expect("loss", &self.loss, &["mse"])?;
                expect("activation", &self.activation, &["relu, output-linear", "relu,output-linear"])?;
            }
            TaskKind::Classification => {
                expect("loss", &self.loss, &["cross entropy", "cross-entropy", "xent"])?;
                expect("activation", &self.activation, &["relu, output-softmax", "relu,output-softmax"])?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn stream_source(&self) -> Result<StreamSource> {
        let dataset = self.dataset.as_deref().unwrap_or("sine");
        let seed = self.stream_seed.unwrap_or(0);
        let source = match dataset {
            "sine" => {
                let mut spec = StreamSpec::sine(self.num_tasks.unwrap_or(50), seed);
                if let Some(n) = self.samples_per_task {
                    spec.samples_per_task = n;
                }
                StreamSource::Generated(spec)
            }
            "synth-class" => {
                let mut spec = StreamSpec::classification(self.num_tasks.unwrap_or(10), seed);
                if let Some(n) = self.samples_per_task {
                    spec.samples_per_task = n;
                }
                StreamSource::Generated(spec)
            }
            "idx" => {
                let (Some(images), Some(labels)) = (&self.idx_images, &self.idx_labels) else {
                    return Err(Error::Config("dataset idx needs idx_images and idx_labels".into()));
                };
                let tasks = idx_class_stream(images, labels, self.max_per_class.unwrap_or(200), seed)?;
                StreamSource::Loaded {
                    name: "idx".into(),
                    tasks: Arc::new(tasks),
                }
            }
            other => return Err(Error::Config(format!("unknown dataset {other:?}"))),
        };
        Ok(source)
    }

    pub fn run_spec(&self) -> Result<RunSpec> {
        let method: Method = self.method.as_deref().unwrap_or("dpmcl").parse()?;
        let stream = self.stream_source()?;
        let first = stream.first_task()?;
        let input = first.input_dim();
        let output = first.output_width();
        if let Some(p) = self.input_size {
            if p != input {
                return Err(Error::Config(format!("input_size {p} does not match the stream ({input})")));
            }
        }
        if let Some(q) = self.output_size {
            if q != output {
                return Err(Error::Config(format!("output_size {q} does not match the stream ({output})")));
            }
        }
        let cfg = self.learner_config(first.kind)?;
        let runs = self.total_runs.unwrap_or(DEFAULT_RUNS);
        if runs == 0 {
            return Err(Error::Config("total_runs must be at least 1".into()));
        }
        Ok(RunSpec {
            method,
            stream,
            cfg,
            runs,
            base_seed: self.seed.unwrap_or(0),
            output_dir: self.out.clone(),
        })
    }
}
