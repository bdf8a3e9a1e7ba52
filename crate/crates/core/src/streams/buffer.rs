use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Batch;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BufferPolicy {
    /// Uniform sample over everything ever offered.
    #[default]
    Reservoir,
    /// First in, first out.
    Ring,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub input: Vec<f64>,
    pub label: usize,
    pub task_id: usize,
}

/// Bounded replay memory shared by rehearsal and meta-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    capacity: usize,
    entries: Vec<MemoryEntry>,
    seen_count: u64,
    /// Next slot to overwrite under the ring policy.
    oldest: usize,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("buffer capacity must be at least 1"));
        }
        Ok(Self {
            capacity,
            entries: Vec::with_capacity(capacity),
            seen_count: 0,
            oldest: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of examples ever offered to the buffer.
    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        examples: impl IntoIterator<Item = MemoryEntry>,
        policy: BufferPolicy,
        rng: &mut R,
    ) {
        for entry in examples {
            self.seen_count += 1;
            if self.entries.len() < self.capacity {
                self.entries.push(entry);
                continue;
            }
            match policy {
                BufferPolicy::Reservoir => {
                    let slot = rng.random_range(0..self.seen_count);
                    if slot < self.capacity as u64 {
                        self.entries[slot as usize] = entry;
                    }
                }
                BufferPolicy::Ring => {
                    self.entries[self.oldest] = entry;
                    self.oldest = (self.oldest + 1) % self.capacity;
                }
            }
        }
        debug_assert!(self.entries.len() <= self.capacity);
    }

    /// `k` uniform draws with replacement, as entry indices.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(Error::Protocol("buffer sample size must be at least 1".into()));
        }
        if self.entries.is_empty() {
            return Err(Error::Protocol("cannot sample from an empty buffer".into()));
        }
        Ok((0..k).map(|_| rng.random_range(0..self.entries.len())).collect())
    }

    /// `k` uniform draws with replacement. The batch carries a task id only
    /// when every drawn entry comes from the same task.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Batch> {
        let indices = self.sample_indices(k, rng)?;
        self.gather(&indices)
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let dim = self.entries[indices[0]].input.len();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.entries[i].input);
            labels.push(self.entries[i].label);
        }
        let first = self.entries[indices[0]].task_id;
        let task_id = indices
            .iter()
            .all(|&i| self.entries[i].task_id == first)
            .then_some(first);
        Batch::new(Matrix::from_vec(indices.len(), dim, data)?, labels, task_id)
    }

    /// Splits drawn entries into one batch per task, in ascending task order.
    pub fn gather_by_task(&self, indices: &[usize]) -> Result<Vec<Batch>> {
        let mut tasks: Vec<usize> = indices.iter().map(|&i| self.entries[i].task_id).collect();
        tasks.sort_unstable();
        tasks.dedup();
        tasks
            .into_iter()
            .map(|t| {
                let own: Vec<usize> = indices.iter().copied().filter(|&i| self.entries[i].task_id == t).collect();
                let mut b = self.gather(&own)?;
                b.task_id = Some(t);
                Ok(b)
            })
            .collect()
    }

    /// Every stored entry as one batch.
    pub fn all(&self) -> Result<Batch> {
        if self.entries.is_empty() {
            return Err(Error::Protocol("buffer is empty".into()));
        }
        let indices: Vec<usize> = (0..self.entries.len()).collect();
        self.gather(&indices)
    }
}
