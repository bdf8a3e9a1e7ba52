//! Accuracy matrix and the continual-learning summary metrics.
//!
//! `R[i][j]` is the test accuracy on task `j` measured right after training on
//! task `i` (0-indexed here), defined only for `j <= i`.
//!
//! - ACC = mean of the last row.
//! - BWT = sum over `i < T-1` of `R[T-1][i] - R[i][i]`, divided by `T`
//!   ([`BwtNorm::Paper`]) or by `T - 1` ([`BwtNorm::Standard`]).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BwtNorm {
    /// Divide by the number of tasks `T`.
    #[default]
    Paper,
    /// Divide by the number of summed terms `T - 1`.
    Standard,
}

impl fmt::Display for BwtNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BwtNorm::Paper => "paper",
            BwtNorm::Standard => "standard",
        })
    }
}

impl FromStr for BwtNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(BwtNorm::Paper),
            "standard" => Ok(BwtNorm::Standard),
            other => Err(Error::config(format!("unknown BWT normalisation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccMatrix {
    tasks: usize,
    cells: Vec<Option<f64>>,
}

impl AccMatrix {
    pub fn new(tasks: usize) -> Result<Self> {
        if tasks == 0 {
            return Err(Error::Bookkeeping("accuracy matrix needs at least one task".into()));
        }
        Ok(Self {
            tasks,
            cells: vec![None; tasks * tasks],
        })
    }

    /// Builds a matrix from rows; `Some` entries above the diagonal are rejected.
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let mut m = Self::new(rows.len())?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() > m.tasks {
                return Err(Error::Bookkeeping(format!("row {i} is longer than {}", m.tasks)));
            }
            for (j, v) in row.iter().enumerate() {
                if let Some(acc) = v {
                    m.record(i, j, *acc)?;
                }
            }
        }
        Ok(m)
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn record(&mut self, i: usize, j: usize, acc: f64) -> Result<()> {
        if i >= self.tasks || j > i {
            return Err(Error::Bookkeeping(format!(
                "entry ({i}, {j}) outside the lower triangle of a {0}x{0} matrix",
                self.tasks
            )));
        }
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::Bookkeeping(format!("accuracy {acc} outside [0, 1]")));
        }
        let cell = &mut self.cells[i * self.tasks + j];
        if cell.is_some() {
            return Err(Error::Bookkeeping(format!("entry ({i}, {j}) already recorded")));
        }
        *cell = Some(acc);
        Ok(())
    }

    /// `None` for unrecorded or upper-triangle entries.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i >= self.tasks || j > i {
            return None;
        }
        self.cells[i * self.tasks + j]
    }

    fn require(&self, i: usize, j: usize) -> Result<f64> {
        self.get(i, j)
            .ok_or_else(|| Error::Bookkeeping(format!("entry ({i}, {j}) has not been recorded")))
    }

    pub fn defined_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Row-major `T x T` with `None` above the diagonal.
    pub fn rows(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.tasks)
            .map(|i| (0..self.tasks).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

/// Mean final accuracy over all tasks.
pub fn acc_metric(m: &AccMatrix) -> Result<f64> {
    let last = m.tasks - 1;
    let sum = (0..m.tasks).map(|j| m.require(last, j)).sum::<Result<f64>>()?;
    Ok(sum / m.tasks as f64)
}

/// Backward transfer; negative values mean forgetting.
pub fn bwt_metric(m: &AccMatrix, norm: BwtNorm) -> Result<f64> {
    if m.tasks < 2 {
        return Err(Error::UndefinedMetric("BWT needs at least two tasks".into()));
    }
    let last = m.tasks - 1;
    let sum = (0..last)
        .map(|i| Ok(m.require(last, i)? - m.require(i, i)?))
        .sum::<Result<f64>>()?;
    let denom = match norm {
        BwtNorm::Paper => m.tasks,
        BwtNorm::Standard => m.tasks - 1,
    };
    Ok(sum / denom as f64)
}

/// Best accuracy each task ever reached, `max_{i >= j} R[i][j]`.
pub fn historical_highest(m: &AccMatrix) -> Result<Vec<f64>> {
    (0..m.tasks)
        .map(|j| {
            (j..m.tasks)
                .map(|i| m.require(i, j))
                .try_fold(f64::NEG_INFINITY, |best, v| Ok(best.max(v?)))
        })
        .collect()
}
