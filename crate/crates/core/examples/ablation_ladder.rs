//! Run the four variants on a few seeds of the reference stream and print median ACC.

use meta_ensembler::cli::{median, run_experiment, RunConfig};
use meta_ensembler::metaloop::Variant;

fn main() -> meta_ensembler::Result<()> {
    let cfg = RunConfig {
        seeds: vec![0, 1, 2],
        variants: Variant::LADDER.to_vec(),
        ..RunConfig::default()
    };
    let sweep = run_experiment(&cfg)?;
    for v in Variant::LADDER {
        let runs: Vec<_> = sweep.results.iter().filter(|r| r.variant == v).collect();
        let acc: Vec<f64> = runs.iter().map(|r| r.acc).collect();
        let bwt: Vec<f64> = runs.iter().filter_map(|r| r.bwt_paper).collect();
        println!(
            "{:<8} ACC {:.4}  BWT {:+.4}",
            v.as_str(),
            median(&acc).unwrap_or(f64::NAN),
            median(&bwt).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
