use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::encode_checkpoint;
use super::config::RunConfig;
use super::runner::{RunFailure, RunResult};
use crate::error::{Error, Result};
use crate::metaloop::Variant;
use crate::metrics::{acc_metric, bwt_metric, historical_highest, AccMatrix, BwtNorm};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const FAILURES_FILE: &str = "failures.csv";
pub const SUMMARY_HEADER: [&str; 6] = ["variant", "seed", "acc", "bwt_paper", "bwt_standard", "wall_ms"];

/// On-disk form of one run's accuracy matrix and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmatrixFile {
    pub variant: Variant,
    pub seed: u64,
    #[serde(rename = "T")]
    pub tasks: usize,
    /// Row-major, `null` above the diagonal.
    #[serde(rename = "R")]
    pub r: Vec<Vec<Option<f64>>>,
    pub acc: f64,
    pub bwt_paper: Option<f64>,
    pub bwt_standard: Option<f64>,
    pub historical_highest: Vec<f64>,
    pub alpha_history: Vec<Option<Vec<f64>>>,
    pub outer_loss_traces: Vec<Vec<f64>>,
}

impl RmatrixFile {
    pub fn from_result(r: &RunResult) -> Self {
        Self {
            variant: r.variant,
            seed: r.seed,
            tasks: r.acc_matrix.tasks(),
            r: r.acc_matrix.rows(),
            acc: r.acc,
            bwt_paper: r.bwt_paper,
            bwt_standard: r.bwt_standard,
            historical_highest: r.historical_highest.clone(),
            alpha_history: r.alpha_history.clone(),
            outer_loss_traces: r.outer_loss_traces.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if file.r.len() != file.tasks {
            return Err(Error::Bookkeeping(format!(
                "{}: T is {} but R has {} rows",
                path.display(),
                file.tasks,
                file.r.len()
            )));
        }
        Ok(file)
    }

    pub fn acc_matrix(&self) -> Result<AccMatrix> {
        AccMatrix::from_rows(&self.r)
    }

    /// ACC, BWT and historical-highest accuracy recomputed from `R` alone.
    pub fn recompute(&self) -> Result<Recomputed> {
        let m = self.acc_matrix()?;
        let bwt = |norm| match bwt_metric(&m, norm) {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Recomputed {
            acc: acc_metric(&m)?,
            bwt_paper: bwt(BwtNorm::Paper)?,
            bwt_standard: bwt(BwtNorm::Standard)?,
            historical_highest: historical_highest(&m)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recomputed {
    pub acc: f64,
    pub bwt_paper: Option<f64>,
    pub bwt_standard: Option<f64>,
    pub historical_highest: Vec<f64>,
}

pub fn rmatrix_file_name(variant: Variant, seed: u64) -> String {
    format!("rmatrix_{variant}_{seed}.json")
}

pub fn checkpoint_file_name(variant: Variant, seed: u64, task: usize) -> String {
    format!("model_{variant}_{seed}_task{task}.ckpt")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn summary_bytes(results: &[RunResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for r in results {
        w.write_record([
            r.variant.to_string(),
            r.seed.to_string(),
            r.acc.to_string(),
            fmt_opt(r.bwt_paper),
            fmt_opt(r.bwt_standard),
            r.wall_ms.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn failures_bytes(failures: &[RunFailure]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "seed", "error"])?;
    for f in failures {
        w.write_record([f.variant.to_string(), f.seed.to_string(), f.error.clone()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes the result files for a sweep into `dir`.
///
/// Everything is first written into a staging directory inside `dir` and
/// then renamed into place, so an interrupted call never leaves a partially
/// written result file behind. Returns the paths written.
pub fn emit_results(results: &[RunResult], failures: &[RunFailure], cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(Error::config("no results to write"));
    }
    let mut files: Vec<(String, Vec<u8>)> = vec![
        (SUMMARY_FILE.into(), summary_bytes(results)?),
        (CONFIG_FILE.into(), cfg.to_json()?.into_bytes()),
    ];
    for r in results {
        let json = serde_json::to_string_pretty(&RmatrixFile::from_result(r))?;
        files.push((rmatrix_file_name(r.variant, r.seed), json.into_bytes()));
        if cfg.checkpoints {
            for (t, p) in r.task_params.iter().enumerate() {
                files.push((checkpoint_file_name(r.variant, r.seed, t), encode_checkpoint(p)?));
            }
        }
    }
    if !failures.is_empty() {
        files.push((FAILURES_FILE.into(), failures_bytes(failures)?));
    }

    fs::create_dir_all(dir)?;
    let staging = tempfile::Builder::new().prefix(".staging-").tempdir_in(dir)?;
    for (name, bytes) in &files {
        fs::write(staging.path().join(name), bytes)?;
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, _) in &files {
        let target = dir.join(name);
        fs::rename(staging.path().join(name), &target)?;
        written.push(target);
    }
    Ok(written)
}

/// Loads every `rmatrix_*.json` in `dir`, sorted by file name.
pub fn load_rmatrices(dir: &Path) -> Result<Vec<RmatrixFile>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("rmatrix_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| RmatrixFile::load(p)).collect()
}
