//! Load a labelled CSV as a task stream and train one task on it.

use std::fmt::Write as _;

use meta_ensembler::net::{accuracy, init_params, mlp_specs, sgd_train};
use meta_ensembler::streams::{ingest_csv, Protocol};

fn main() -> meta_ensembler::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("data.csv");
    let mut text = String::from("label,f0,f1\n");
    for i in 0..200 {
        let label = i % 4;
        let (cx, cy) = [(0.0, 0.0), (4.0, 0.0), (0.0, 4.0), (4.0, 4.0)][label];
        let jitter = (i as f64 * 0.37).sin();
        writeln!(text, "{label},{},{}", cx + jitter, cy - jitter).unwrap();
    }
    std::fs::write(&path, text)?;

    let stream = ingest_csv(&path, &[vec![0, 1], vec![2, 3]], Protocol::Til, 0, 10)?;
    let task = &stream.tasks()[0];
    let specs = mlp_specs(stream.input_dim(), &[16], stream.num_classes_total());
    let trained = sgd_train(&init_params(&specs, 0)?, &task.train, 0.05, 20, stream.mask_for(0))?;
    println!(
        "task 0 ({} train examples, mask {:?}): test accuracy {:.3}",
        task.train_len(),
        stream.mask_for(0),
        accuracy(&trained, &task.test_set(), stream.mask_for(0))?
    );
    Ok(())
}
