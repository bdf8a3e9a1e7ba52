use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{build_tasks, Protocol, SplitOptions, TaskStream};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
const SPLIT_STREAM: u64 = 1;

/// Gaussian-cloud stream: every class is an isotropic unit-variance Gaussian
/// around its own mean, with all class means at least `separation` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    pub separation: f64,
    pub samples_per_class: usize,
    pub seed: u64,
    pub protocol: Protocol,
    pub batch_size: usize,
    pub train_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_tasks: 5,
            classes_per_task: 2,
            dim: 16,
            separation: 6.0,
            samples_per_class: 200,
            seed: 0,
            protocol: Protocol::Cil,
            batch_size: 10,
            train_fraction: 0.8,
        }
    }
}

pub fn make_synthetic_stream(spec: &SyntheticSpec) -> Result<TaskStream> {
    if spec.num_tasks == 0 || spec.classes_per_task == 0 || spec.dim == 0 || spec.samples_per_class == 0 {
        return Err(Error::config("synthetic stream sizes must all be positive"));
    }
    if !(spec.separation > 0.0 && spec.separation.is_finite()) {
        return Err(Error::config("separation must be a positive number"));
    }
    let num_classes = spec.num_tasks * spec.classes_per_task;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Spread the candidate means so that random placement succeeds quickly:
    // the typical pairwise distance is about sqrt(2) * scale * sqrt(dim).
    let dim = spec.dim as f64;
    let scale = spec.separation * (num_classes as f64).powf(1.0 / dim).max(1.0) / dim.sqrt();
    let means = place_means(num_classes, spec.dim, spec.separation, scale, &mut rng)?;

    let samples_by_class: Vec<Vec<Vec<f64>>> = means
        .iter()
        .map(|mean| {
            (0..spec.samples_per_class)
                .map(|_| {
                    mean.iter()
                        .map(|m| m + Distribution::<f64>::sample(&StandardNormal, &mut rng))
                        .collect()
                })
                .collect()
        })
        .collect();

    let split_spec: Vec<Vec<usize>> = (0..spec.num_tasks)
        .map(|t| (t * spec.classes_per_task..(t + 1) * spec.classes_per_task).collect())
        .collect();
    let tasks = build_tasks(
        &samples_by_class,
        &split_spec,
        spec.dim,
        &SplitOptions {
            seed: derive_seed(spec.seed, SPLIT_STREAM),
            batch_size: spec.batch_size,
            train_fraction: spec.train_fraction,
        },
    )?;
    TaskStream::new(tasks, spec.protocol, num_classes)
}

/// Draws `k` means from `N(0, scale^2 I)`, rejecting candidates closer than
/// `separation` to an already placed mean.
fn place_means(k: usize, dim: usize, separation: f64, scale: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    for c in 0..k {
        let placed = (0..MAX_PLACEMENT_ATTEMPTS).find_map(|_| {
            let candidate: Vec<f64> = (0..dim)
                .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
                .collect();
            means
                .iter()
                .all(|m| {
                    let d2: f64 = m.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum();
                    d2.sqrt() >= separation
                })
                .then_some(candidate)
        });
        match placed {
            Some(m) => means.push(m),
            None => {
                return Err(Error::config(format!(
                    "could not place class mean {c} at distance >= {separation} in {dim} dimensions"
                )))
            }
        }
    }
    Ok(means)
}
