use std::ffi::OsString;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::{parse_seeds, RunConfig};
use super::output::{emit_results, load_rmatrices, SUMMARY_FILE};
use super::runner::{median, run_experiment, SweepOutcome};
use crate::ensemble::{broadcast_alpha, interpolate_layerwise, AlphaVector};
use crate::error::{Error, Result};
use crate::metaloop::Variant;
use crate::metrics::BwtNorm;
use crate::streams::Protocol;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUN: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mwe", version, about = "Layer-wise meta-weight ensembling for continual learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured variants over the configured seeds.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Variant to run; repeat for several.
        #[arg(long = "variant", value_parser = parse_variant)]
        variants: Vec<Variant>,
    },
    /// Run the full ablation ladder: naive, E, E_ML, E_ML_LW.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Recompute ACC and BWT from the R matrices stored in a result directory.
    Metrics {
        /// Result directory written by `run` or `ablate`.
        dir: PathBuf,
        #[arg(long, value_parser = parse_bwt_norm, default_value = "paper")]
        bwt_norm: BwtNorm,
    },
    /// Interpolate two checkpoints layer by layer.
    Blend {
        #[arg(long)]
        current: PathBuf,
        #[arg(long)]
        previous: PathBuf,
        /// One coefficient for all layers, or a comma-separated list with one per layer.
        #[arg(long)]
        alpha: String,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_protocol)]
    pub protocol: Option<Protocol>,
    /// Seeds as `a..b` (inclusive), `n`, or `a,b,c`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_bwt_norm)]
    pub bwt_norm: Option<BwtNorm>,
    /// Also write a checkpoint of the fused model after every task.
    #[arg(long)]
    pub checkpoints: bool,
    /// Record wall-clock time per run (results are then no longer byte-reproducible).
    #[arg(long)]
    pub wall_time: bool,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_protocol(s: &str) -> std::result::Result<Protocol, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_bwt_norm(s: &str) -> std::result::Result<BwtNorm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl CommonArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = self.protocol {
            cfg.protocol = p;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(n) = self.bwt_norm {
            cfg.bwt_norm = n;
        }
        cfg.checkpoints |= self.checkpoints;
        cfg.record_wall_time |= self.wall_time;
        Ok(cfg)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_RUN,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let stdout = io::stdout();
    match execute(cli.command, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one command, writing human-readable output to `out`.
pub fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Run { common, variants } => {
            let mut cfg = common.resolve()?;
            if !variants.is_empty() {
                cfg.variants = variants;
            }
            sweep(&cfg, out)
        }
        Command::Ablate { common } => {
            let mut cfg = common.resolve()?;
            cfg.variants = Variant::LADDER.to_vec();
            sweep(&cfg, out)
        }
        Command::Metrics { dir, bwt_norm } => metrics(&dir, bwt_norm, out),
        Command::Blend {
            current,
            previous,
            alpha,
            output,
        } => {
            let c = load_checkpoint(&current)?;
            let p = load_checkpoint(&previous)?;
            let alphas = parse_alphas(&alpha, c.num_layers())?;
            let fused = interpolate_layerwise(&c, &p, &alphas)?;
            save_checkpoint(&fused, &output)?;
            writeln!(out, "wrote {} ({} layers, alpha {:?})", output.display(), fused.num_layers(), alphas.values())?;
            Ok(EXIT_OK)
        }
    }
}

fn parse_alphas(text: &str, layers: usize) -> Result<AlphaVector> {
    let values: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("cannot parse alpha '{s}'")))
        })
        .collect::<Result<_>>()?;
    match values.as_slice() {
        [a] => broadcast_alpha(layers, *a),
        _ => AlphaVector::new(values),
    }
}

fn sweep(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let SweepOutcome { results, failures } = run_experiment(cfg)?;
    for f in &failures {
        eprintln!("run {} seed {} failed: {}", f.variant, f.seed, f.error);
    }
    if results.is_empty() {
        return Ok(EXIT_RUN);
    }
    emit_results(&results, &failures, cfg, &cfg.out_dir)?;
    writeln!(out, "wrote {}", cfg.out_dir.join(SUMMARY_FILE).display())?;
    writeln!(out, "{:<8} {:>5} {:>10} {:>10}", "variant", "runs", "med_acc", format!("med_bwt_{}", cfg.bwt_norm))?;
    for v in &cfg.variants {
        let runs: Vec<_> = results.iter().filter(|r| r.variant == *v).collect();
        let accs: Vec<f64> = runs.iter().map(|r| r.acc).collect();
        let bwts: Vec<f64> = runs.iter().filter_map(|r| r.bwt(cfg.bwt_norm)).collect();
        writeln!(
            out,
            "{:<8} {:>5} {:>10} {:>10}",
            v.as_str(),
            runs.len(),
            median(&accs).map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into()),
            median(&bwts).map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into()),
        )?;
    }
    Ok(if failures.is_empty() { EXIT_OK } else { EXIT_RUN })
}

fn metrics(dir: &std::path::Path, norm: BwtNorm, out: &mut dyn Write) -> Result<i32> {
    let files = load_rmatrices(dir)?;
    if files.is_empty() {
        return Err(Error::config(format!("no rmatrix_*.json files in {}", dir.display())));
    }
    writeln!(out, "variant,seed,T,acc,bwt_{norm}")?;
    for f in &files {
        let m = f.recompute()?;
        let bwt = match norm {
            BwtNorm::Paper => m.bwt_paper,
            BwtNorm::Standard => m.bwt_standard,
        };
        writeln!(
            out,
            "{},{},{},{},{}",
            f.variant,
            f.seed,
            f.tasks,
            m.acc,
            bwt.map(|b| b.to_string()).unwrap_or_default()
        )?;
    }
    Ok(EXIT_OK)
}
