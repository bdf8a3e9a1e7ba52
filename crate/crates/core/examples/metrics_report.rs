//! Compute ACC, BWT and historical-highest accuracy from an accuracy matrix.

use meta_ensembler::metrics::{acc_metric, bwt_metric, historical_highest, AccMatrix, BwtNorm};

fn main() -> meta_ensembler::Result<()> {
    let m = AccMatrix::from_rows(&[
        vec![Some(0.95)],
        vec![Some(0.70), Some(0.93)],
        vec![Some(0.60), Some(0.81), Some(0.96)],
    ])?;
    println!("ACC            {:.4}", acc_metric(&m)?);
    println!("BWT (paper)    {:+.4}", bwt_metric(&m, BwtNorm::Paper)?);
    println!("BWT (standard) {:+.4}", bwt_metric(&m, BwtNorm::Standard)?);
    println!("highest        {:?}", historical_highest(&m)?);
    Ok(())
}
