use std::time::Instant;

use rayon::prelude::*;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::metaloop::{generator_for, run_task, MetaConfig, NoopObserver, RunContext, TrainObserver, Variant};
use crate::metrics::{acc_metric, bwt_metric, historical_highest, AccMatrix, BwtNorm};
use crate::net::{accuracy, init_params, mlp_specs, ParamSet};
use crate::seed::derive_seed;
use crate::streams::{MemoryBuffer, TaskStream};

const INIT_TAG: u64 = 0x494e;
const GEN_TAG: u64 = 0x4745;
const TASK_TAG: u64 = 0x5441;

/// One (variant, seed) run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub acc_matrix: AccMatrix,
    pub acc: f64,
    /// `None` when the stream has a single task.
    pub bwt_paper: Option<f64>,
    pub bwt_standard: Option<f64>,
    pub historical_highest: Vec<f64>,
    /// Coefficients used after each task; `None` where no fusion happened.
    pub alpha_history: Vec<Option<Vec<f64>>>,
    pub outer_loss_traces: Vec<Vec<f64>>,
    /// Fused parameters after each task.
    pub task_params: Vec<ParamSet>,
    pub wall_ms: u64,
}

impl RunResult {
    pub fn bwt(&self, norm: BwtNorm) -> Option<f64> {
        match norm {
            BwtNorm::Paper => self.bwt_paper,
            BwtNorm::Standard => self.bwt_standard,
        }
    }

    pub fn final_params(&self) -> &ParamSet {
        self.task_params.last().expect("a run covers at least one task")
    }
}

#[derive(Debug, Clone)]
pub struct RunFailure {
    pub variant: Variant,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub results: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
}

/// Runs every task of `stream` under `variant` and records the accuracy matrix.
pub fn run_stream(
    stream: &TaskStream,
    cfg: &RunConfig,
    variant: Variant,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<RunResult> {
    let started = Instant::now();
    let meta = MetaConfig {
        variant,
        ..cfg.meta.clone()
    };
    let specs = mlp_specs(stream.input_dim(), &cfg.model.hidden, stream.num_classes_total());
    let mut fused = init_params(&specs, derive_seed(seed, INIT_TAG))?;
    let mut gen = generator_for(variant, specs.len(), &meta, derive_seed(seed, GEN_TAG))?;
    let mut buffer = MemoryBuffer::new(cfg.buffer.capacity)?;
    let mut ctx = RunContext::new(stream, &buffer, cfg.buffer.policy);
    if let Some(n) = cfg.buffer.per_task {
        ctx.contribution = n;
    }

    let t = stream.len();
    let mut acc_matrix = AccMatrix::new(t)?;
    let mut alpha_history = Vec::with_capacity(t);
    let mut outer_loss_traces = Vec::with_capacity(t);
    let mut task_params = Vec::with_capacity(t);
    for i in 0..t {
        let (outcome, next_gen) = run_task(
            i,
            &fused,
            gen,
            &mut buffer,
            &ctx,
            &meta,
            derive_seed(seed, TASK_TAG),
            observer,
        )?;
        gen = next_gen;
        fused = outcome.fused_params;
        for (j, task) in stream.tasks().iter().enumerate().take(i + 1) {
            let acc = accuracy(&fused, &task.test_set(), stream.mask_for(j))?;
            acc_matrix.record(i, j, acc)?;
        }
        alpha_history.push(outcome.alphas_used.map(|a| a.values().to_vec()));
        outer_loss_traces.push(outcome.outer_loss_trace);
        task_params.push(fused.clone());
    }

    let optional = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(RunResult {
        variant,
        seed,
        acc: acc_metric(&acc_matrix)?,
        bwt_paper: optional(bwt_metric(&acc_matrix, BwtNorm::Paper))?,
        bwt_standard: optional(bwt_metric(&acc_matrix, BwtNorm::Standard))?,
        historical_highest: historical_highest(&acc_matrix)?,
        acc_matrix,
        alpha_history,
        outer_loss_traces,
        task_params,
        wall_ms: if cfg.record_wall_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        },
    })
}

/// Builds the stream for `seed` and runs `variant` on it.
pub fn run_single(cfg: &RunConfig, variant: Variant, seed: u64) -> Result<RunResult> {
    let stream = cfg.build_stream(seed)?;
    run_stream(&stream, cfg, variant, seed, &mut NoopObserver)
}

/// Runs every (variant, seed) pair of the config, in parallel.
///
/// The config is validated up front; afterwards a failing run is recorded in
/// [`SweepOutcome::failures`] and the sweep continues. Results come back in
/// config order (variants outer, seeds inner) regardless of scheduling.
pub fn run_experiment(cfg: &RunConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let jobs: Vec<(Variant, u64)> = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(variant, seed)| (variant, seed, run_single(cfg, variant, seed)))
        .collect();
    let mut sweep = SweepOutcome::default();
    for (variant, seed, outcome) in outcomes {
        match outcome {
            Ok(r) => sweep.results.push(r),
            Err(e) => sweep.failures.push(RunFailure {
                variant,
                seed,
                error: e.to_string(),
            }),
        }
    }
    Ok(sweep)
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::StreamSource;
    use crate::streams::SyntheticSpec;

    fn tiny(num_tasks: usize) -> RunConfig {
        RunConfig {
            stream: StreamSource::Synthetic(SyntheticSpec {
                num_tasks,
                samples_per_class: 20,
                dim: 4,
                ..SyntheticSpec::default()
            }),
            meta: MetaConfig {
                iterations: 3,
                base_epochs: 1,
                ..MetaConfig::default()
            },
            seeds: vec![0],
            ..RunConfig::default()
        }
    }

    #[test]
    fn single_task_has_undefined_bwt() {
        let r = run_single(&tiny(1), Variant::Naive, 0).unwrap();
        assert_eq!(r.acc_matrix.tasks(), 1);
        assert!(r.bwt_paper.is_none() && r.bwt_standard.is_none());
        assert_eq!(r.alpha_history, vec![None]);
    }

    #[test]
    fn triangle_is_filled() {
        let r = run_single(&tiny(3), Variant::EMlLw, 1).unwrap();
        assert_eq!(r.acc_matrix.defined_count(), 6);
        assert_eq!(r.outer_loss_traces.iter().map(Vec::len).collect::<Vec<_>>(), vec![0, 3, 3]);
        assert!(r.alpha_history[0].is_none() && r.alpha_history[2].is_some());
    }

    #[test]
    fn sweep_order_follows_config() {
        let cfg = RunConfig {
            variants: vec![Variant::E, Variant::Naive],
            seeds: vec![2, 1],
            ..tiny(2)
        };
        let out = run_experiment(&cfg).unwrap();
        let order: Vec<_> = out.results.iter().map(|r| (r.variant, r.seed)).collect();
        assert_eq!(order, vec![(Variant::E, 2), (Variant::E, 1), (Variant::Naive, 2), (Variant::Naive, 1)]);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
