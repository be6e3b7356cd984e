//! Bounded replay store of samples from earlier tasks.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvictionPolicy {
    /// Every offered sample is retained with probability `capacity / seen`.
    #[default]
    Reservoir,
    /// Oldest samples are overwritten first.
    Fifo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMemory {
    capacity: usize,
    policy: EvictionPolicy,
    items: Option<Dataset>,
    task_ids: Vec<usize>,
    seen_count: u64,
    fifo_next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize, policy: EvictionPolicy) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("memory capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            policy,
            items: None,
            task_ids: Vec::new(),
            seen_count: 0,
            fifo_next: 0,
        })
    }

    pub fn reservoir(capacity: usize) -> Result<Self> {
        Self::new(capacity, EvictionPolicy::Reservoir)
    }

    /// A store that keeps everything it is offered.
    pub fn unbounded() -> Self {
        Self::new(usize::MAX, EvictionPolicy::Fifo).expect("positive capacity")
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.task_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_ids.is_empty()
    }

    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    pub fn contents(&self) -> Option<&Dataset> {
        self.items.as_ref()
    }

    pub fn task_ids(&self) -> &[usize] {
        &self.task_ids
    }

    /// Offers every sample of `samples` (tagged with `task_id`) to the store.
    pub fn append_task<R: Rng + ?Sized>(&mut self, samples: &Dataset, task_id: usize, rng: &mut R) -> Result<()> {
        if let Some(items) = &self.items {
            if !items.compatible(samples) {
                return Err(Error::shape(
                    "replay memory append",
                    format!("{} features", items.input_dim()),
                    format!("{} features", samples.input_dim()),
                ));
            }
        }
        // Fill phase: take a prefix without any random draws.
        let free = self.capacity - self.len();
        let take = free.min(samples.len());
        if take > 0 {
            let prefix: Vec<usize> = (0..take).collect();
            let chunk = samples.select(&prefix);
            self.items = Some(match self.items.take() {
                None => chunk,
                Some(items) => items.concat(&chunk)?,
            });
            self.task_ids.extend(std::iter::repeat_n(task_id, take));
            self.seen_count += take as u64;
        }
        let items = self.items.as_mut().expect("non-empty after fill");
        for j in take..samples.len() {
            self.seen_count += 1;
            let slot = match self.policy {
                EvictionPolicy::Reservoir => {
                    let r = rng.random_range(0..self.seen_count);
                    (r < self.capacity as u64).then_some(r as usize)
                }
                EvictionPolicy::Fifo => {
                    let s = self.fifo_next;
                    self.fifo_next = (self.fifo_next + 1) % self.capacity;
                    Some(s)
                }
            };
            if let Some(i) = slot {
                items.set_row(i, samples, j);
                self.task_ids[i] = task_id;
            }
        }
        Ok(())
    }

    /// Uniform draw of `size` stored samples, with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Dataset> {
        let items = self.items.as_ref().ok_or(Error::EmptyMemory)?;
        let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..items.len())).collect();
        Ok(items.select(&idx))
    }

    /// Columns: `task_id`, features, targets.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if let Some(items) = &self.items {
            let mut header = vec!["task_id".to_string()];
            header.extend(items.csv_header());
            w.write_record(&header)?;
            for (i, t) in self.task_ids.iter().enumerate() {
                let mut row = vec![t.to_string()];
                row.extend(items.csv_row(i));
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}
