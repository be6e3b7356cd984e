//! Deterministic sequential task streams.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{split_task, Dataset, Targets, Task};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const AMPLITUDE_RANGE: (f64, f64) = (0.1, 5.0);
pub const PHASE_RANGE: (f64, f64) = (0.0, PI);

/// Amplitude, phase and frequency of one sine task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineTaskParams {
    pub amplitude: f64,
    pub phase: f64,
    pub frequency: f64,
}

impl SineTaskParams {
    pub fn new(amplitude: f64, phase: f64, frequency: f64) -> Result<Self> {
        let in_range = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
        if !in_range(amplitude, AMPLITUDE_RANGE) {
            return Err(Error::InvalidArgument(format!(
                "amplitude {amplitude} outside [{}, {}]",
                AMPLITUDE_RANGE.0, AMPLITUDE_RANGE.1
            )));
        }
        if !in_range(phase, PHASE_RANGE) {
            return Err(Error::InvalidArgument(format!("phase {phase} outside [0, pi]")));
        }
        if !(frequency.is_finite() && frequency >= 0.0) {
            return Err(Error::InvalidArgument(format!("frequency {frequency} must be >= 0")));
        }
        Ok(Self {
            amplitude,
            phase,
            frequency,
        })
    }

    pub fn as_input(&self) -> [f64; 3] {
        [self.amplitude, self.phase, self.frequency]
    }
}

/// `A sin(2 pi f t + phi)` sampled on `grid`.
pub fn sine_waveform(amplitude: f64, phase: f64, frequency: f64, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|t| amplitude * (2.0 * PI * frequency * t + phase).sin())
        .collect()
}

/// `points` uniformly spaced times covering `[0, t_max]`.
pub fn time_grid(points: usize, t_max: f64) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|j| t_max * j as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineStreamConfig {
    pub grid_points: usize,
    pub t_max: f64,
    pub frequency_range: (f64, f64),
    /// Largest per-task change of each parameter, as a fraction of its range.
    pub max_step_fraction: f64,
    /// Standard deviation of the Gaussian jitter added to every input.
    pub input_jitter: f64,
}

impl Default for SineStreamConfig {
    fn default() -> Self {
        Self {
            grid_points: 100,
            t_max: 0.01,
            frequency_range: (0.5, 5.0),
            max_step_fraction: 0.05,
            input_jitter: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStreamConfig {
    pub input_dim: usize,
    /// Standard deviation of samples around their class mean.
    pub noise_std: f64,
    /// Standard deviation of the class means themselves.
    pub mean_scale: f64,
}

impl Default for ClassStreamConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            noise_std: 1.0,
            mean_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamKind {
    Sine(SineStreamConfig),
    Classification(ClassStreamConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub n_tasks: usize,
    pub seed: u64,
    pub samples_per_task: usize,
    pub kind: StreamKind,
}

impl StreamSpec {
    pub fn sine(n_tasks: usize, seed: u64) -> Self {
        Self {
            n_tasks,
            seed,
            samples_per_task: 320,
            kind: StreamKind::Sine(SineStreamConfig::default()),
        }
    }

    pub fn classification(n_tasks: usize, seed: u64) -> Self {
        Self {
            n_tasks,
            seed,
            samples_per_task: 120,
            kind: StreamKind::Classification(ClassStreamConfig::default()),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn generate(&self) -> Result<Vec<Task>> {
        match self.kind {
            StreamKind::Sine(_) => gen_sine_stream(self),
            StreamKind::Classification(_) => gen_synthetic_class_stream(self),
        }
    }
}

fn check_common(spec: &StreamSpec) -> Result<()> {
    if spec.n_tasks < 1 {
        return Err(Error::InvalidArgument("a stream needs at least one task".into()));
    }
    Ok(())
}

/// Parameter trajectory of a sine stream: a uniform start followed by a
/// reflected random walk whose steps are bounded by `max_step_fraction`
/// of each range.
pub fn sine_param_walk(n_tasks: usize, cfg: &SineStreamConfig, rng: &mut impl Rng) -> Result<Vec<SineTaskParams>> {
    let (f_lo, f_hi) = cfg.frequency_range;
    if !(f_lo > 0.0 && f_hi >= f_lo && f_hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "frequency range must satisfy 0 < lo <= hi, got ({f_lo}, {f_hi})"
        )));
    }
    let ranges = [AMPLITUDE_RANGE, PHASE_RANGE, (f_lo, f_hi)];
    let mut cur: Vec<f64> = ranges
        .iter()
        .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
        .collect();
    let mut out = Vec::with_capacity(n_tasks);
    for k in 0..n_tasks {
        if k > 0 {
            for (v, &(lo, hi)) in cur.iter_mut().zip(&ranges) {
                let span = hi - lo;
                let step = cfg.max_step_fraction * span;
                if step > 0.0 {
                    *v = reflect(*v + rng.random_range(-step..=step), lo, hi);
                }
            }
        }
        out.push(SineTaskParams::new(cur[0], cur[1], cur[2])?);
    }
    Ok(out)
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let r = if v < lo {
        2.0 * lo - v
    } else if v > hi {
        2.0 * hi - v
    } else {
        v
    };
    r.clamp(lo, hi)
}

/// Samples of one sine task: each input is the task's `(A, phi, f)` plus
/// Gaussian jitter; its target is the waveform of the jittered parameters.
pub fn sine_task_samples(
    params: &SineTaskParams,
    n: usize,
    cfg: &SineStreamConfig,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("a task needs samples".into()));
    }
    let grid = time_grid(cfg.grid_points, cfg.t_max);
    let jitter = Normal::new(0.0, cfg.input_jitter)
        .map_err(|e| Error::InvalidArgument(format!("input jitter: {e}")))?;
    let mut xs = Vec::with_capacity(n * 3);
    let mut ys = Vec::with_capacity(n * grid.len());
    for _ in 0..n {
        let x: Vec<f64> = params.as_input().iter().map(|v| v + jitter.sample(rng)).collect();
        ys.extend(sine_waveform(x[0], x[1], x[2], &grid));
        xs.extend(x);
    }
    Dataset::new(
        Tensor::matrix(n, 3, xs)?,
        Targets::Values(Tensor::matrix(n, grid.len(), ys)?),
    )
}

/// Incremental sine-wave regression stream.
pub fn gen_sine_stream(spec: &StreamSpec) -> Result<Vec<Task>> {
    check_common(spec)?;
    let StreamKind::Sine(cfg) = &spec.kind else {
        return Err(Error::InvalidArgument("gen_sine_stream needs a sine stream spec".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let walk = sine_param_walk(spec.n_tasks, cfg, &mut rng)?;
    walk.iter()
        .enumerate()
        .map(|(k, p)| {
            let data = sine_task_samples(p, spec.samples_per_task, cfg, &mut rng)?;
            split_task(k, data, rng.random())
        })
        .collect()
}

/// Class-incremental stream of Gaussian clusters: task `k` holds only
/// samples of class `k`, and the label space covers all tasks.
pub fn gen_synthetic_class_stream(spec: &StreamSpec) -> Result<Vec<Task>> {
    check_common(spec)?;
    let StreamKind::Classification(cfg) = &spec.kind else {
        return Err(Error::InvalidArgument(
            "gen_synthetic_class_stream needs a classification stream spec".into(),
        ));
    };
    let classes = spec.n_tasks;
    if classes < 2 {
        return Err(Error::InvalidArgument("class count must be at least 2".into()));
    }
    if spec.samples_per_task < classes {
        return Err(Error::InvalidArgument(format!(
            "{} samples per task is fewer than {classes} classes",
            spec.samples_per_task
        )));
    }
    if cfg.input_dim == 0 || !(cfg.noise_std >= 0.0) || !(cfg.mean_scale > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid classification stream config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = cfg.input_dim;
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..p).map(|_| cfg.mean_scale * std_normal.sample(&mut rng)).collect())
        .collect();
    (0..classes)
        .map(|k| {
            let n = spec.samples_per_task;
            let mut xs = Vec::with_capacity(n * p);
            for _ in 0..n {
                xs.extend(means[k].iter().map(|m| m + cfg.noise_std * std_normal.sample(&mut rng)));
            }
            let data = Dataset::new(
                Tensor::matrix(n, p, xs)?,
                Targets::Labels { labels: vec![k; n], classes },
            )?;
            split_task(k, data, rng.random())
        })
        .collect()
}

/// One task per class of an IDX image/label pair, in class order, with at
/// most `max_per_class` samples each.
pub fn idx_class_stream(images: &Path, labels: &Path, max_per_class: usize, seed: u64) -> Result<Vec<Task>> {
    let (x, y) = crate::idx::load_idx_images(images, labels)?;
    let classes = y.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..classes)
        .map(|c| {
            let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] as usize == c).collect();
            idx.truncate(max_per_class);
            let labels = vec![c; idx.len()];
            let data = Dataset::new(x.select_rows(&idx), Targets::Labels { labels, classes })?;
            split_task(c, data, rng.random())
        })
        .collect()
}

/// Shuffled minibatches over `n` samples, reshuffled at every epoch.
/// The final short batch of an epoch is kept.
#[derive(Debug, Clone)]
pub struct Batcher {
    n: usize,
    batch_size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("cannot batch an empty dataset".into()));
        }
        Ok(Self {
            n,
            batch_size,
            order: Vec::new(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Index set of the next batch, cycling through epochs forever.
    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.n);
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }

    pub fn next_batch(&mut self, data: &Dataset) -> Dataset {
        data.select(&self.next_indices())
    }

    /// The batches of one full epoch.
    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        self.pos = self.n;
        let mut out = Vec::new();
        loop {
            out.push(self.next_indices());
            if self.pos >= self.n {
                return out;
            }
        }
    }
}

/// Batches of one shuffled epoch over `data`.
pub fn batches(data: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<Dataset>> {
    let mut b = Batcher::new(data.len(), batch_size, seed)?;
    Ok(b.epoch().iter().map(|idx| data.select(idx)).collect())
}
