use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metaloop::{MetaConfig, Variant};
use crate::metrics::BwtNorm;
use crate::seed::derive_seed;
use crate::streams::{
    ingest_csv, ingest_idx, make_synthetic_stream, BufferPolicy, Protocol, SyntheticSpec, TaskStream,
};

/// Where the task stream comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StreamSource {
    Synthetic(SyntheticSpec),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        split_spec: Vec<Vec<usize>>,
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
    Csv {
        path: PathBuf,
        split_spec: Vec<Vec<usize>>,
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
}

fn default_batch() -> usize {
    10
}

impl Default for StreamSource {
    fn default() -> Self {
        StreamSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BufferConfig {
    pub capacity: usize,
    pub policy: BufferPolicy,
    /// Examples stored per task; defaults to `capacity / num_tasks`.
    pub per_task: Option<usize>,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            capacity: 200,
            policy: BufferPolicy::Reservoir,
            per_task: None,
        }
    }
}

/// Full description of an experiment sweep, loadable from JSON.
///
/// Missing fields take their defaults, so `{}` is a valid config describing
/// the reference synthetic stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub stream: StreamSource,
    pub protocol: Protocol,
    pub meta: MetaConfig,
    pub model: ModelConfig,
    pub buffer: BufferConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub out_dir: PathBuf,
    pub bwt_norm: BwtNorm,
    /// Write per-task checkpoints of the fused model next to the results.
    pub checkpoints: bool,
    /// Record wall-clock time in `summary.csv`. Off by default so that
    /// repeated runs produce byte-identical files.
    pub record_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stream: StreamSource::default(),
            protocol: Protocol::Cil,
            meta: MetaConfig::default(),
            model: ModelConfig::default(),
            buffer: BufferConfig::default(),
            seeds: (0..10).collect(),
            variants: vec![Variant::EMlLw],
            out_dir: PathBuf::from("results"),
            bwt_norm: BwtNorm::Paper,
            checkpoints: false,
            record_wall_time: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks every setting that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variant list is empty"));
        }
        if self.buffer.capacity == 0 {
            return Err(Error::config("buffer capacity must be at least 1"));
        }
        if self.buffer.per_task == Some(0) {
            return Err(Error::config("buffer per_task must be at least 1"));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        match &self.stream {
            StreamSource::Synthetic(s) => {
                if s.num_tasks == 0 || s.classes_per_task == 0 || s.dim == 0 || s.samples_per_class == 0 {
                    return Err(Error::config("synthetic stream sizes must all be positive"));
                }
                if !(s.separation > 0.0 && s.separation.is_finite()) {
                    return Err(Error::config("separation must be a positive number"));
                }
                if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
                    return Err(Error::config("train_fraction must lie strictly between 0 and 1"));
                }
                if s.batch_size == 0 {
                    return Err(Error::config("stream batch_size must be at least 1"));
                }
            }
            StreamSource::Idx { split_spec, batch_size, .. } | StreamSource::Csv { split_spec, batch_size, .. } => {
                if split_spec.is_empty() || split_spec.iter().any(Vec::is_empty) {
                    return Err(Error::config("split_spec needs at least one non-empty class set"));
                }
                if *batch_size == 0 {
                    return Err(Error::config("stream batch_size must be at least 1"));
                }
            }
        }
        Ok(())
    }

    /// Builds the stream for one run seed. Every variant run with the same
    /// seed sees the same stream.
    pub fn build_stream(&self, seed: u64) -> Result<TaskStream> {
        const STREAM_TAG: u64 = 0x5354;
        let stream = match &self.stream {
            StreamSource::Synthetic(spec) => make_synthetic_stream(&SyntheticSpec {
                seed: derive_seed(spec.seed, derive_seed(seed, STREAM_TAG)),
                protocol: self.protocol,
                ..spec.clone()
            })?,
            StreamSource::Idx {
                images,
                labels,
                split_spec,
                batch_size,
            } => ingest_idx(images, labels, split_spec, self.protocol, derive_seed(seed, STREAM_TAG), *batch_size)?,
            StreamSource::Csv {
                path,
                split_spec,
                batch_size,
            } => ingest_csv(path, split_spec, self.protocol, derive_seed(seed, STREAM_TAG), *batch_size)?,
        };
        Ok(stream.with_protocol(self.protocol))
    }
}

/// Parses `a..b` (inclusive), a single seed, or a comma-separated list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::config(format!("cannot parse seeds '{text}'; expected a..b, n, or a,b,c"));
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}
