//! CSV datasets with a `label,f0,f1,...` header.

use std::path::Path;

use super::{build_tasks, validate_split_spec, Protocol, SplitOptions, TaskStream};
use crate::error::{Error, Result};

pub fn ingest_csv(
    path: &Path,
    split_spec: &[Vec<usize>],
    protocol: Protocol,
    seed: u64,
    batch_size: usize,
) -> Result<TaskStream> {
    let num_classes = validate_split_spec(split_spec)?;
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("label") || headers.len() < 2 {
        return Err(Error::data("CSV header must start with 'label' followed by feature columns"));
    }
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("f{i}") {
            return Err(Error::data(format!("CSV column {} is '{h}', expected 'f{i}'", i + 1)));
        }
    }
    let dim = headers.len() - 1;
    let mut by_class: Vec<Vec<Vec<f64>>> = vec![Vec::new(); num_classes];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("row {}: label '{}' is not a class index", row + 1, &record[0])))?;
        if !split_spec.iter().any(|s| s.contains(&label)) {
            return Err(Error::data(format!("row {}: label {label} is not in the split spec", row + 1)));
        }
        let features = record
            .iter()
            .skip(1)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::data(format!("row {}: bad feature value '{v}'", row + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        by_class[label].push(features);
    }
    let tasks = build_tasks(
        &by_class,
        split_spec,
        dim,
        &SplitOptions {
            seed,
            batch_size,
            train_fraction: 0.8,
        },
    )?;
    TaskStream::new(tasks, protocol, num_classes)
}
