//! Bi-level training of the coefficient generator and the per-task driver.
//!
//! For task `i > 0` the driver trains a copy of the previously fused model on
//! the task, featurises its gradient, and then tunes the generator on replay
//! memory: each outer iteration generates coefficients, fuses the trained and
//! previous models layer by layer, measures the fused model's loss on a memory
//! batch and takes one SGD step on the generator parameters.
//!
//! The fused parameters are affine in the coefficients, so the outer gradient
//! has a closed form:
//!
//! ```text
//! dL/da_j   = < grad_{theta_j} L(fused), current_j - previous_j >
//! dL/dphi   = (d a / d phi)^T · dL/da
//! ```

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coeffgen::{featurize_with, CoeffGenerator, FeatureConfig, GeneratorGrad, GradFeatures};
use crate::ensemble::{broadcast_alpha, fixed_alpha, interpolate_layerwise, AlphaVector};
use crate::error::{Error, Result};
use crate::net::{self, Batch, ParamSet};
use crate::seed::derive_seed;
use crate::streams::{BufferPolicy, MemoryBuffer, MemoryEntry, Protocol, TaskStream};

/// Rung of the ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Replay fine-tuning with no fusion.
    #[serde(rename = "naive")]
    Naive,
    /// Fixed coefficient for every layer.
    #[serde(rename = "E")]
    E,
    /// One meta-learned coefficient broadcast to all layers.
    #[serde(rename = "E_ML")]
    EMl,
    /// One meta-learned coefficient per layer.
    #[serde(rename = "E_ML_LW")]
    EMlLw,
}

impl Variant {
    pub const LADDER: [Variant; 4] = [Variant::Naive, Variant::E, Variant::EMl, Variant::EMlLw];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Naive => "naive",
            Variant::E => "E",
            Variant::EMl => "E_ML",
            Variant::EMlLw => "E_ML_LW",
        }
    }

    fn is_meta_learned(self) -> bool {
        matches!(self, Variant::EMl | Variant::EMlLw)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Variant::Naive),
            "E" | "e" => Ok(Variant::E),
            "E_ML" | "e_ml" | "E+ML" => Ok(Variant::EMl),
            "E_ML_LW" | "e_ml_lw" | "E+ML+LW" => Ok(Variant::EMlLw),
            other => Err(Error::config(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Outer iterations per task.
    pub iterations: usize,
    pub meta_lr: f64,
    pub base_lr: f64,
    pub base_epochs: usize,
    /// Mini-batch size for base training (non-online protocols).
    pub batch_size: usize,
    /// Memory examples appended to every base training step. The default 0
    /// trains on the current task only and uses memory solely for the outer loop.
    pub replay_batch: usize,
    pub variant: Variant,
    /// Current-task examples used to compute the gradient features.
    pub grad_sample: usize,
    /// Memory examples per outer gradient step.
    pub buffer_batch: usize,
    /// Coefficient used by the fixed-weight variant.
    pub fixed_alpha: f64,
    /// Generator hidden width; `None` means four times the layer count.
    pub hidden_width: Option<usize>,
    pub features: FeatureConfig,
    /// Recompute the gradient features from the fused model before every
    /// outer iteration instead of once per task.
    pub refresh_features: bool,
    /// Store the current task's memory contribution before the meta-update
    /// (so the validation memory covers all tasks seen so far) rather than after.
    pub buffer_includes_current: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            meta_lr: 0.5,
            base_lr: 0.05,
            base_epochs: 5,
            batch_size: 10,
            replay_batch: 0,
            variant: Variant::EMlLw,
            grad_sample: 256,
            buffer_batch: 64,
            fixed_alpha: 0.5,
            hidden_width: None,
            features: FeatureConfig::default(),
            refresh_features: false,
            buffer_includes_current: true,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("iterations", self.iterations),
            ("base_epochs", self.base_epochs),
            ("batch_size", self.batch_size),
            ("grad_sample", self.grad_sample),
            ("buffer_batch", self.buffer_batch),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be at least 1")));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("base_lr must be positive"));
        }
        // Zero is allowed: it freezes the generator.
        if !(self.meta_lr >= 0.0 && self.meta_lr.is_finite()) {
            return Err(Error::config("meta_lr must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.fixed_alpha) {
            return Err(Error::config("fixed_alpha must lie in [0, 1]"));
        }
        if self.hidden_width == Some(0) {
            return Err(Error::config("hidden_width must be at least 1"));
        }
        Ok(())
    }

    pub fn hidden_for(&self, layers: usize) -> usize {
        self.hidden_width.unwrap_or(4 * layers)
    }
}

/// A fresh generator shaped for `variant`: width-1 output for the scalar
/// variant, one output per layer otherwise.
pub fn generator_for(variant: Variant, layers: usize, cfg: &MetaConfig, seed: u64) -> Result<CoeffGenerator> {
    let n_out = if variant == Variant::EMl { 1 } else { layers };
    CoeffGenerator::init(layers, cfg.hidden_for(layers), n_out, seed)
}

/// Coefficients for an `n_layers` model: layer-wise when the generator emits
/// one value per layer, broadcast when it emits a single value.
pub fn alphas_from_generator(gen: &CoeffGenerator, feats: &GradFeatures, n_layers: usize) -> Result<AlphaVector> {
    if gen.n_out() == n_layers {
        gen.generate(feats)
    } else if gen.n_out() == 1 {
        broadcast_alpha(n_layers, gen.generate_scalar(feats)?)
    } else {
        Err(Error::shape(format!(
            "generator emits {} coefficients for a {n_layers}-layer model",
            gen.n_out()
        )))
    }
}

/// Loss of the fused model and its gradient with respect to the generator.
#[derive(Debug, Clone)]
pub struct OuterEval {
    pub loss: f64,
    pub alphas: AlphaVector,
    /// `dL/da_j` per layer.
    pub d_alpha: Vec<f64>,
    pub grad: GeneratorGrad,
}

/// Outer objective on validation parts, each with its own class mask.
pub fn outer_eval(
    gen: &CoeffGenerator,
    feats: &GradFeatures,
    current: &ParamSet,
    previous: &ParamSet,
    val: &[(&Batch, Option<&[usize]>)],
) -> Result<OuterEval> {
    let alphas = alphas_from_generator(gen, feats, current.num_layers())?;
    let fused = interpolate_layerwise(current, previous, &alphas)?;
    let (loss, grads) = net::combined_loss_and_grads(&fused, val)?;
    let d_alpha: Vec<f64> = grads
        .layers()
        .iter()
        .zip(current.layers().iter().zip(previous.layers()))
        .map(|(g, (c, p))| g.iter().zip(c.iter().zip(p.iter())).map(|(g, (c, p))| g * (c - p)).sum())
        .collect();
    let upstream = if gen.n_out() == 1 && d_alpha.len() != 1 {
        vec![d_alpha.iter().sum()]
    } else {
        d_alpha.clone()
    };
    let grad = gen.backward(feats, &upstream)?;
    Ok(OuterEval {
        loss,
        alphas,
        d_alpha,
        grad,
    })
}

/// Validation loss of the model fused under the generator's coefficients.
pub fn outer_loss(
    gen: &CoeffGenerator,
    feats: &GradFeatures,
    current: &ParamSet,
    previous: &ParamSet,
    val: &Batch,
) -> Result<f64> {
    let alphas = alphas_from_generator(gen, feats, current.num_layers())?;
    let fused = interpolate_layerwise(current, previous, &alphas)?;
    Ok(net::loss_and_grads(&fused, val, None)?.0)
}

/// Exact gradient of [`outer_loss`] with respect to the generator parameters.
pub fn outer_gradient(
    gen: &CoeffGenerator,
    feats: &GradFeatures,
    current: &ParamSet,
    previous: &ParamSet,
    val: &Batch,
) -> Result<GeneratorGrad> {
    Ok(outer_eval(gen, feats, current, previous, &[(val, None)])?.grad)
}

/// How memory examples are masked: per task under TIL, not at all otherwise.
#[derive(Debug, Clone, Default)]
pub struct Masking {
    per_task: Option<Vec<Vec<usize>>>,
}

impl Masking {
    pub fn none() -> Self {
        Self { per_task: None }
    }

    pub fn for_stream(stream: &TaskStream) -> Self {
        match stream.protocol() {
            Protocol::Til => Self {
                per_task: Some(stream.class_sets()),
            },
            Protocol::Cil | Protocol::Ocil => Self::none(),
        }
    }

    fn mask(&self, task: Option<usize>) -> Option<&[usize]> {
        match (&self.per_task, task) {
            (Some(sets), Some(t)) => sets.get(t).map(Vec::as_slice),
            _ => None,
        }
    }

    /// Memory batches for `indices`, split by task when masking is per task.
    fn memory_batches(&self, buffer: &MemoryBuffer, indices: &[usize]) -> Result<Vec<Batch>> {
        if self.per_task.is_some() {
            buffer.gather_by_task(indices)
        } else {
            Ok(vec![buffer.gather(indices)?])
        }
    }

    fn parts<'a>(&'a self, batches: &'a [Batch]) -> Vec<(&'a Batch, Option<&'a [usize]>)> {
        batches.iter().map(|b| (b, self.mask(b.task_id))).collect()
    }
}

/// Runs the outer loop for `cfg.iterations` steps.
///
/// Each step draws `cfg.buffer_batch` memory examples with replacement and
/// takes one SGD step of size `cfg.meta_lr` on the generator. The returned
/// trace holds, for every iteration, the outer loss on the whole memory before
/// that iteration's update.
#[allow(clippy::too_many_arguments)]
pub fn meta_update(
    gen: &CoeffGenerator,
    feats: &GradFeatures,
    current: &ParamSet,
    previous: &ParamSet,
    buffer: &MemoryBuffer,
    cfg: &MetaConfig,
    masking: &Masking,
    seed: u64,
) -> Result<(CoeffGenerator, Vec<f64>)> {
    meta_update_with(gen, feats, current, previous, buffer, cfg, masking, seed, |_, _| Ok(None))
}

#[allow(clippy::too_many_arguments)]
fn meta_update_with<F>(
    gen: &CoeffGenerator,
    feats: &GradFeatures,
    current: &ParamSet,
    previous: &ParamSet,
    buffer: &MemoryBuffer,
    cfg: &MetaConfig,
    masking: &Masking,
    seed: u64,
    mut refresh: F,
) -> Result<(CoeffGenerator, Vec<f64>)>
where
    F: FnMut(&CoeffGenerator, &GradFeatures) -> Result<Option<GradFeatures>>,
{
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(Error::Protocol(
            "meta-update needs a non-empty memory; skip it for the first task".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..buffer.len()).collect();
    let full_memory = masking.memory_batches(buffer, &all)?;
    let full_parts = masking.parts(&full_memory);

    let mut gen = gen.clone();
    let mut feats = feats.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for m in 0..cfg.iterations {
        if m > 0 {
            if let Some(f) = refresh(&gen, &feats)? {
                feats = f;
            }
        }
        let alphas = alphas_from_generator(&gen, &feats, current.num_layers())?;
        let fused = interpolate_layerwise(current, previous, &alphas)?;
        trace.push(net::combined_loss_and_grads(&fused, &full_parts)?.0);

        let indices = buffer.sample_indices(cfg.buffer_batch, &mut rng)?;
        let batches = masking.memory_batches(buffer, &indices)?;
        let eval = outer_eval(&gen, &feats, current, previous, &masking.parts(&batches))?;
        gen.apply_gradient(&eval.grad, cfg.meta_lr);
    }
    Ok((gen, trace))
}

/// Everything the driver produces for one task.
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub trained_params: ParamSet,
    pub fused_params: ParamSet,
    /// `None` when no fusion happened (first task, or the naive variant).
    pub alphas_used: Option<AlphaVector>,
    pub outer_loss_trace: Vec<f64>,
    pub features: Option<GradFeatures>,
}

/// Receives the indices (into the task's concatenated training set) of the
/// examples consumed by each base training step.
pub trait TrainObserver {
    fn on_train_step(&mut self, task: usize, examples: &[usize]);
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {
    fn on_train_step(&mut self, _task: usize, _examples: &[usize]) {}
}

/// Stream-level settings shared by every task of a run.
#[derive(Debug, Clone)]
pub struct RunContext<'a> {
    pub stream: &'a TaskStream,
    pub buffer_policy: BufferPolicy,
    /// Examples each task stores in memory.
    pub contribution: usize,
}

impl<'a> RunContext<'a> {
    /// Default per-task contribution: an even share of the capacity.
    pub fn new(stream: &'a TaskStream, buffer: &MemoryBuffer, buffer_policy: BufferPolicy) -> Self {
        Self {
            stream,
            buffer_policy,
            contribution: (buffer.capacity() / stream.len()).max(1),
        }
    }
}

// Purpose tags for per-task random streams.
const TAG_SHUFFLE: u64 = 1;
const TAG_REPLAY: u64 = 2;
const TAG_CONTRIBUTION: u64 = 3;
const TAG_BUFFER: u64 = 4;
const TAG_FEATURES: u64 = 5;
const TAG_META: u64 = 6;

fn task_seed(seed: u64, task: usize, tag: u64) -> u64 {
    derive_seed(derive_seed(seed, task as u64), tag)
}

/// One task of the continual-learning loop (`task` is 0-based).
///
/// Starts from `prev_fused`, trains on the task with memory rehearsal, then
/// (from the second task on) fuses the trained and previous models according
/// to `cfg.variant`. The task's memory contribution is stored before or after
/// the meta-update depending on `cfg.buffer_includes_current`. Returns the
/// outcome and the generator to hand to the next task.
#[allow(clippy::too_many_arguments)]
pub fn run_task(
    task: usize,
    prev_fused: &ParamSet,
    gen: CoeffGenerator,
    buffer: &mut MemoryBuffer,
    ctx: &RunContext<'_>,
    cfg: &MetaConfig,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<(TaskOutcome, CoeffGenerator)> {
    cfg.validate()?;
    let stream = ctx.stream;
    let spec = stream
        .tasks()
        .get(task)
        .ok_or_else(|| Error::config(format!("task {task} not in a {}-task stream", stream.len())))?;
    let masking = Masking::for_stream(stream);
    let mask = stream.mask_for(task);
    let online = stream.protocol() == Protocol::Ocil;
    let train_set = spec.train_set();
    let n = train_set.len();

    let mut contribution_rng = ChaCha8Rng::seed_from_u64(task_seed(seed, task, TAG_CONTRIBUTION));
    let mut keep: Vec<usize> = index::sample(&mut contribution_rng, n, ctx.contribution.min(n)).into_vec();
    keep.sort_unstable();
    let contribution: Vec<MemoryEntry> = keep
        .iter()
        .map(|&i| MemoryEntry {
            input: train_set.inputs.row(i).to_vec(),
            label: train_set.labels[i],
            task_id: task,
        })
        .collect();

    // Base training.
    let mut trained = prev_fused.clone();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(task_seed(seed, task, TAG_SHUFFLE));
    let mut replay_rng = ChaCha8Rng::seed_from_u64(task_seed(seed, task, TAG_REPLAY));
    let schedule: Vec<Vec<usize>> = if online {
        let mut offset = 0;
        spec.train
            .iter()
            .map(|b| {
                let idx = (offset..offset + b.len()).collect();
                offset += b.len();
                idx
            })
            .collect()
    } else {
        let mut steps = Vec::new();
        for _ in 0..cfg.base_epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut shuffle_rng);
            steps.extend(order.chunks(cfg.batch_size).map(<[usize]>::to_vec));
        }
        steps
    };
    for (step, indices) in schedule.iter().enumerate() {
        let current = train_set.select(indices);
        let mut replay = Vec::new();
        if cfg.replay_batch > 0 && !buffer.is_empty() {
            let drawn = buffer.sample_indices(cfg.replay_batch, &mut replay_rng)?;
            replay = masking.memory_batches(buffer, &drawn)?;
        }
        let mut parts = vec![(&current, mask)];
        parts.extend(masking.parts(&replay));
        net::sgd_step(&mut trained, &parts, cfg.base_lr, step).map_err(|e| e.in_task(task))?;
        observer.on_train_step(task, indices);
    }

    let mut buffer_rng = ChaCha8Rng::seed_from_u64(task_seed(seed, task, TAG_BUFFER));
    let fuse = task > 0 && cfg.variant != Variant::Naive;
    if !fuse {
        buffer.add(contribution, ctx.buffer_policy, &mut buffer_rng);
        let outcome = TaskOutcome {
            fused_params: trained.clone(),
            trained_params: trained,
            alphas_used: None,
            outer_loss_trace: Vec::new(),
            features: None,
        };
        return Ok((outcome, gen));
    }

    let mut pending = Some(contribution);
    if cfg.buffer_includes_current {
        buffer.add(pending.take().unwrap_or_default(), ctx.buffer_policy, &mut buffer_rng);
    }

    let (alphas, trace, gen, features) = if cfg.variant.is_meta_learned() {
        // Gradient features come from a sample of the task data. Online runs
        // may not revisit the stream, so they use the examples just stored.
        let grad_batch = if online {
            let own: Vec<usize> = (0..keep.len()).collect();
            train_set.select(&keep).select(&own)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, task, TAG_FEATURES));
            let mut sample = index::sample(&mut rng, n, cfg.grad_sample.min(n)).into_vec();
            sample.sort_unstable();
            train_set.select(&sample)
        };
        let features_at = |params: &ParamSet| -> Result<GradFeatures> {
            let (_, grads) = net::loss_and_grads(params, &grad_batch, mask)?;
            featurize_with(&grads, &cfg.features)
        };
        let feats = features_at(&trained)?;
        let refresh = |g: &CoeffGenerator, f: &GradFeatures| -> Result<Option<GradFeatures>> {
            if !cfg.refresh_features {
                return Ok(None);
            }
            let a = alphas_from_generator(g, f, trained.num_layers())?;
            let fused = interpolate_layerwise(&trained, prev_fused, &a)?;
            features_at(&fused).map(Some)
        };
        let (gen, trace) = meta_update_with(
            &gen,
            &feats,
            &trained,
            prev_fused,
            buffer,
            cfg,
            &masking,
            task_seed(seed, task, TAG_META),
            refresh,
        )
        .map_err(|e| e.in_task(task))?;
        let final_feats = if cfg.refresh_features {
            let a = alphas_from_generator(&gen, &feats, trained.num_layers())?;
            features_at(&interpolate_layerwise(&trained, prev_fused, &a)?)?
        } else {
            feats
        };
        let alphas = alphas_from_generator(&gen, &final_feats, trained.num_layers())?;
        (alphas, trace, gen, Some(final_feats))
    } else {
        (fixed_alpha(trained.num_layers(), cfg.fixed_alpha)?, Vec::new(), gen, None)
    };

    let fused = interpolate_layerwise(&trained, prev_fused, &alphas)?;
    fused.check_finite().map_err(|_| Error::Divergence { step: 0, task: Some(task) })?;
    if let Some(rest) = pending {
        buffer.add(rest, ctx.buffer_policy, &mut buffer_rng);
    }
    Ok((
        TaskOutcome {
            trained_params: trained,
            fused_params: fused,
            alphas_used: Some(alphas),
            outer_loss_trace: trace,
            features,
        },
        gen,
    ))
}
