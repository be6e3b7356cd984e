//! Continual learners consuming one task at a time.

pub mod baselines;
pub mod config;
pub mod dpmcl;
pub mod gradcheck;
pub mod model;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{anml_observe, cml_observe, er_observe, naive_observe, oml_observe};
pub use config::LearnerConfig;
pub use dpmcl::{dpmcl_observe, forgetting_gradients, CostTriple, ForgettingGradients, IterationRecord, ProbeConfig};
pub use model::{Dims, GatedNet, Model, Net, Part, TwoNet};

use crate::data::{Task, TaskKind};
use crate::error::{Error, Result};
use crate::memory::ReplayMemory;
use crate::nn::{Activation, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dpmcl,
    Naive,
    Er,
    Oml,
    Cml,
    Anml,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Dpmcl,
        Method::Naive,
        Method::Er,
        Method::Oml,
        Method::Cml,
        Method::Anml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dpmcl => "dpmcl",
            Method::Naive => "naive",
            Method::Er => "er",
            Method::Oml => "oml",
            Method::Cml => "cml",
            Method::Anml => "anml",
        }
    }

    /// Gradient updates spent on one task.
    pub fn updates_per_task(self, cfg: &LearnerConfig) -> usize {
        match self {
            Method::Dpmcl => cfg.kappa * (2 + cfg.zeta),
            Method::Naive | Method::Er => cfg.n_steps,
            Method::Oml | Method::Cml | Method::Anml => cfg.n_meta + cfg.n_grad,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// What one `observe` call did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObserveReport {
    /// Training cost of every update (for DPMCL, the trace cost per iteration).
    pub costs: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
}

/// A learner with its networks, task memory and random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    method: Method,
    config: LearnerConfig,
    dims: Dims,
    model: Model,
    memory: ReplayMemory,
    rng: ChaCha8Rng,
    tasks_seen: usize,
}

impl Learner {
    pub fn new(method: Method, config: LearnerConfig, dims: Dims, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = match method {
            Method::Dpmcl | Method::Cml => Model::composed(dims, config.base_lr, &mut rng)?,
            Method::Naive | Method::Er | Method::Oml => Model::single(dims, config.base_lr, &mut rng)?,
            Method::Anml => Model::gated(dims, config.base_lr, &mut rng)?,
        };
        let memory = match (method, config.baseline_memory_capacity) {
            (Method::Dpmcl, _) => ReplayMemory::new(config.memory_capacity, config.eviction)?,
            (_, Some(cap)) => ReplayMemory::new(cap, config.eviction)?,
            (_, None) => ReplayMemory::unbounded(),
        };
        Ok(Self {
            method,
            config,
            dims,
            model,
            memory,
            rng,
            tasks_seen: 0,
        })
    }

    /// Learner sized for the tasks of a stream.
    pub fn for_task(method: Method, config: LearnerConfig, task: &Task, seed: u64) -> Result<Self> {
        let dims = Dims::for_task(task, &config);
        Self::new(method, config, dims, seed)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn tasks_seen(&self) -> usize {
        self.tasks_seen
    }

    fn check_task(&self, task: &Task) -> Result<()> {
        if task.kind != self.dims.kind {
            return Err(Error::InvalidArgument(format!(
                "{:?} task given to a {:?} learner",
                task.kind, self.dims.kind
            )));
        }
        if task.input_dim() != self.dims.input {
            return Err(Error::shape("task features", self.dims.input, task.input_dim()));
        }
        if task.output_width() != self.dims.output {
            return Err(Error::shape("task outputs", self.dims.output, task.output_width()));
        }
        Ok(())
    }

    /// Trains on one task.
    pub fn observe(&mut self, task: &Task) -> Result<ObserveReport> {
        self.check_task(task)?;
        let (model, memory, cfg, rng) = (&mut self.model, &mut self.memory, &self.config, &mut self.rng);
        let report = match self.method {
            Method::Dpmcl => {
                let iterations = dpmcl_observe(model, task, memory, cfg, rng)?;
                ObserveReport {
                    costs: iterations.iter().map(IterationRecord::cost).collect(),
                    iterations,
                }
            }
            method => {
                let costs = match method {
                    Method::Naive => naive_observe(model, task, cfg, rng)?,
                    Method::Er => er_observe(model, task, memory, cfg, rng)?,
                    Method::Oml => oml_observe(model, task, memory, cfg, rng)?,
                    Method::Cml => cml_observe(model, task, memory, cfg, rng)?,
                    Method::Anml => anml_observe(model, task, memory, cfg, rng)?,
                    Method::Dpmcl => unreachable!(),
                };
                ObserveReport {
                    costs,
                    iterations: Vec::new(),
                }
            }
        };
        self.tasks_seen += 1;
        Ok(report)
    }

    /// Outputs for `x`; class probabilities for classification.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.model.predict(x)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let networks = self
            .model
            .nets()
            .into_iter()
            .map(|(role, net)| NetworkState {
                role: role.to_string(),
                net: net.clone(),
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            method: self.method,
            kind: self.dims.kind,
            input_dim: self.dims.input,
            output_dim: self.dims.output,
            hidden_units: self.dims.hidden,
            config: self.config.clone(),
            gated_output: match &self.model {
                Model::Gated(g) => Some(g.output),
                _ => None,
            },
            networks,
            rng: RngState {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            tasks_seen: self.tasks_seen,
            memory: Some(self.memory.clone()),
        }
    }

    pub fn restore(ck: Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        let dims = Dims {
            input: ck.input_dim,
            output: ck.output_dim,
            hidden: ck.hidden_units,
            kind: ck.kind,
            init_scale: ck.config.init_scale,
        };
        let fresh = Learner::new(ck.method, ck.config.clone(), dims, 0)?;
        let expected: Vec<_> = fresh.model.nets().into_iter().map(|(r, n)| (r, n.spec.clone())).collect();
        if expected.len() != ck.networks.len() {
            return Err(Error::shape("checkpoint networks", expected.len(), ck.networks.len()));
        }
        for ((role, spec), state) in expected.iter().zip(&ck.networks) {
            if *role != state.role || *spec != state.net.spec {
                return Err(Error::shape("checkpoint network", format!("{role} {:?}", spec.layer_sizes), format!("{} {:?}", state.role, state.net.spec.layer_sizes)));
            }
            state.net.params.check_congruent(spec)?;
            state.net.opt.accumulators.check_congruent(spec)?;
            if !state.net.params.is_finite() {
                return Err(Error::NonFinite(format!("checkpoint parameters of {role}")));
            }
        }
        let mut nets = ck.networks.into_iter().map(|s| s.net);
        let model = match fresh.model {
            Model::Single(_) => Model::Single(nets.next().expect("checked length")),
            Model::Composed(_) => {
                let rep = nets.next().expect("checked length");
                Model::Composed(TwoNet::new(rep, nets.next().expect("checked length"))?)
            }
            Model::Gated(g) => {
                let gate = nets.next().expect("checked length");
                let output = ck.gated_output.unwrap_or(g.output);
                Model::Gated(GatedNet::new(gate, nets.next().expect("checked length"), output)?)
            }
        };
        let mut rng = ChaCha8Rng::from_seed(ck.rng.seed);
        rng.set_stream(ck.rng.stream);
        let word_pos: u128 = ck
            .rng
            .word_pos
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad rng word position {:?}", ck.rng.word_pos)))?;
        rng.set_word_pos(word_pos);
        Ok(Self {
            model,
            memory: ck.memory.unwrap_or(fresh.memory),
            rng,
            tasks_seen: ck.tasks_seen,
            ..fresh
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::restore(serde_json::from_str(&text)?)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Portable JSON learner state.
///
/// Each network records its layer sizes and activations, its parameters in
/// layer order (weight `[fan_in, fan_out]` row-major, then bias), the Adagrad
/// accumulators in the same layout, and the optimizer's rate and epsilon.
/// The random stream is stored as its ChaCha seed, stream id and word
/// position (decimal string, as it can exceed 64 bits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub method: Method,
    pub kind: TaskKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_units: usize,
    pub config: LearnerConfig,
    pub gated_output: Option<Activation>,
    pub networks: Vec<NetworkState>,
    pub rng: RngState,
    pub tasks_seen: usize,
    pub memory: Option<ReplayMemory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub role: String,
    #[serde(flatten)]
    pub net: Net,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: String,
}
