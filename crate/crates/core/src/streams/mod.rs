//! Task streams and the replay memory.
//!
//! A [`TaskStream`] is an ordered sequence of tasks with pairwise-disjoint
//! class sets. Each task keeps its training data as fixed mini-batches; under
//! the online protocol the driver walks these batches once, in order.

mod buffer;
mod idx;
mod synthetic;
mod tabular;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Batch;
use crate::tensor::Matrix;

pub use buffer::{BufferPolicy, MemoryBuffer, MemoryEntry};
pub use idx::{encode_idx_images, encode_idx_labels, ingest_idx, read_idx_images, read_idx_labels, IdxImages};
pub use synthetic::{make_synthetic_stream, SyntheticSpec};
pub use tabular::ingest_csv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Task-incremental: task identity known, logits masked to the task's classes.
    Til,
    /// Class-incremental: one shared head, no task identity.
    #[default]
    Cil,
    /// Online class-incremental: like CIL, but each training example is seen once.
    Ocil,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Til => "til",
            Protocol::Cil => "cil",
            Protocol::Ocil => "ocil",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "til" => Ok(Protocol::Til),
            "cil" => Ok(Protocol::Cil),
            "ocil" => Ok(Protocol::Ocil),
            other => Err(Error::config(format!("unknown protocol '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: usize,
    pub classes: Vec<usize>,
    pub train: Vec<Batch>,
    pub test: Vec<Batch>,
}

impl Task {
    pub fn train_len(&self) -> usize {
        self.train.iter().map(Batch::len).sum()
    }

    /// All training batches concatenated in stream order.
    pub fn train_set(&self) -> Batch {
        concat(&self.train, self.id)
    }

    pub fn test_set(&self) -> Batch {
        concat(&self.test, self.id)
    }
}

fn concat(batches: &[Batch], task_id: usize) -> Batch {
    let inputs: Vec<&Matrix> = batches.iter().map(|b| &b.inputs).collect();
    Batch {
        inputs: Matrix::vstack(&inputs).expect("task batches share a width"),
        labels: batches.iter().flat_map(|b| b.labels.iter().copied()).collect(),
        task_id: Some(task_id),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    tasks: Vec<Task>,
    protocol: Protocol,
    num_classes_total: usize,
}

impl TaskStream {
    /// Validates class disjointness and that every example's label belongs to its task.
    pub fn new(tasks: Vec<Task>, protocol: Protocol, num_classes_total: usize) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::config("a stream needs at least one task"));
        }
        let mut seen = BTreeSet::new();
        let mut dim = None;
        for (i, task) in tasks.iter().enumerate() {
            if task.id != i {
                return Err(Error::data(format!("task at position {i} has id {}", task.id)));
            }
            if task.classes.is_empty() {
                return Err(Error::data(format!("task {i} has no classes")));
            }
            for &c in &task.classes {
                if c >= num_classes_total {
                    return Err(Error::data(format!("class {c} outside 0..{num_classes_total}")));
                }
                if !seen.insert(c) {
                    return Err(Error::data(format!("class {c} appears in more than one task")));
                }
            }
            if task.train.is_empty() || task.test.is_empty() {
                return Err(Error::data(format!("task {i} needs train and test data")));
            }
            for b in task.train.iter().chain(&task.test) {
                if let Some(&y) = b.labels.iter().find(|y| !task.classes.contains(y)) {
                    return Err(Error::data(format!("label {y} does not belong to task {i}")));
                }
                match dim {
                    None => dim = Some(b.inputs.cols()),
                    Some(d) if d != b.inputs.cols() => {
                        return Err(Error::shape(format!("task {i} has input width {}, expected {d}", b.inputs.cols())))
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            tasks,
            protocol,
            num_classes_total,
        })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn num_classes_total(&self) -> usize {
        self.num_classes_total
    }

    pub fn input_dim(&self) -> usize {
        self.tasks[0].train[0].inputs.cols()
    }

    /// Class set of every task, indexed by task id.
    pub fn class_sets(&self) -> Vec<Vec<usize>> {
        self.tasks.iter().map(|t| t.classes.clone()).collect()
    }

    /// Class mask for evaluating or training on `task` under this protocol.
    pub fn mask_for(&self, task: usize) -> Option<&[usize]> {
        match self.protocol {
            Protocol::Til => Some(&self.tasks[task].classes),
            Protocol::Cil | Protocol::Ocil => None,
        }
    }

    pub fn with_protocol(mut self, protocol: Protocol) -> Self {
        self.protocol = protocol;
        self
    }
}

pub(crate) struct SplitOptions {
    pub seed: u64,
    pub batch_size: usize,
    pub train_fraction: f64,
}

/// Builds tasks from per-class sample lists: per-class shuffle and train/test
/// split, then a shuffled, batched training set per task.
pub(crate) fn build_tasks(
    samples_by_class: &[Vec<Vec<f64>>],
    split_spec: &[Vec<usize>],
    dim: usize,
    opts: &SplitOptions,
) -> Result<Vec<Task>> {
    if opts.batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if !(opts.train_fraction > 0.0 && opts.train_fraction < 1.0) {
        return Err(Error::config("train fraction must lie strictly between 0 and 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut tasks = Vec::with_capacity(split_spec.len());
    for (t, classes) in split_spec.iter().enumerate() {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for &c in classes {
            let samples = &samples_by_class[c];
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut rng);
            let n_train = ((samples.len() as f64) * opts.train_fraction).round() as usize;
            if n_train == 0 || n_train == samples.len() {
                return Err(Error::data(format!(
                    "class {c} has {} samples, too few for a train/test split",
                    samples.len()
                )));
            }
            train.extend(order[..n_train].iter().map(|&i| (samples[i].clone(), c)));
            test.extend(order[n_train..].iter().map(|&i| (samples[i].clone(), c)));
        }
        train.shuffle(&mut rng);
        let to_batch = |chunk: &[(Vec<f64>, usize)]| -> Result<Batch> {
            let mut data = Vec::with_capacity(chunk.len() * dim);
            for (x, _) in chunk {
                data.extend_from_slice(x);
            }
            Batch::new(
                Matrix::from_vec(chunk.len(), dim, data)?,
                chunk.iter().map(|(_, y)| *y).collect(),
                Some(t),
            )
        };
        let train_batches = train.chunks(opts.batch_size).map(to_batch).collect::<Result<Vec<_>>>()?;
        let test_batch = to_batch(&test)?;
        tasks.push(Task {
            id: t,
            classes: classes.clone(),
            train: train_batches,
            test: vec![test_batch],
        });
    }
    Ok(tasks)
}

/// Checks that a split spec is non-empty, pairwise disjoint, and returns `max class + 1`.
pub(crate) fn validate_split_spec(split_spec: &[Vec<usize>]) -> Result<usize> {
    if split_spec.is_empty() {
        return Err(Error::config("split spec must name at least one task"));
    }
    let mut seen = BTreeSet::new();
    for (t, classes) in split_spec.iter().enumerate() {
        if classes.is_empty() {
            return Err(Error::config(format!("task {t} in split spec has no classes")));
        }
        for &c in classes {
            if !seen.insert(c) {
                return Err(Error::config(format!("class {c} listed in more than one task")));
            }
        }
    }
    Ok(seen.iter().next_back().map_or(0, |m| m + 1))
}
