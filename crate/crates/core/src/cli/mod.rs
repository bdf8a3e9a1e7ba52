//! Experiment configuration, sweeps, result files and checkpoints, plus the
//! command-line front end used by the `mwe` binary.
//!
//! Verbs:
//!
//! - `run`: run the configured variants over the configured seeds.
//! - `ablate`: the same with all four variants.
//! - `metrics`: recompute ACC and BWT from stored R matrices.
//! - `blend`: interpolate two checkpoints with given coefficients.

pub mod args;
pub mod checkpoint;
pub mod config;
pub mod output;
pub mod runner;

pub use args::{run_cli, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_RUN};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader};
pub use config::{parse_seeds, BufferConfig, ModelConfig, RunConfig, StreamSource};
pub use output::{
    checkpoint_file_name, emit_results, load_rmatrices, rmatrix_file_name, Recomputed, RmatrixFile, CONFIG_FILE, FAILURES_FILE,
    SUMMARY_FILE, SUMMARY_HEADER,
};
pub use runner::{median, run_experiment, run_single, run_stream, RunFailure, RunResult, SweepOutcome};
