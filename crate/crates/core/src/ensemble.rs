//! Layer-wise weight-space interpolation of two parameter sets.
//!
//! For layer `j` with coefficient `a_j`, every weight and bias entry of the
//! fused model is `a_j * current + (1 - a_j) * previous`. A coefficient of 1
//! keeps the freshly trained layer, 0 keeps the previously fused one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{LayerParams, ParamSet};

/// One mixing coefficient per layer, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlphaVector(Vec<f64>);

impl AlphaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("alpha vector must have at least one entry"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::config(format!("mixing coefficient {v} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `1 - a` for every entry.
    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|a| 1.0 - a).collect())
    }
}

/// Constant coefficient for every layer (the fixed-weight ablation).
pub fn fixed_alpha(n: usize, value: f64) -> Result<AlphaVector> {
    if n == 0 {
        return Err(Error::config("layer count must be at least 1"));
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::config(format!("mixing coefficient {value} outside [0, 1]")));
    }
    Ok(AlphaVector(vec![value; n]))
}

/// Replicates one learned coefficient over all layers.
pub fn broadcast_alpha(n: usize, scalar_alpha: f64) -> Result<AlphaVector> {
    fixed_alpha(n, scalar_alpha)
}

fn mix(a: f64, current: &[f64], previous: &[f64]) -> Vec<f64> {
    // Endpoints copy the source so that signed zeros survive bit-for-bit.
    if a == 1.0 {
        current.to_vec()
    } else if a == 0.0 {
        previous.to_vec()
    } else {
        current
            .iter()
            .zip(previous)
            .map(|(c, p)| a * c + (1.0 - a) * p)
            .collect()
    }
}

/// Fuses `current` and `previous` layer by layer under `alphas`.
pub fn interpolate_layerwise(current: &ParamSet, previous: &ParamSet, alphas: &AlphaVector) -> Result<ParamSet> {
    if !current.is_congruent(previous) {
        return Err(Error::Ensemble(
            "current and previous parameter sets are not shape-congruent".into(),
        ));
    }
    if alphas.len() != current.num_layers() {
        return Err(Error::Ensemble(format!(
            "{} mixing coefficients for {} layers",
            alphas.len(),
            current.num_layers()
        )));
    }
    let layers = current
        .layers()
        .iter()
        .zip(previous.layers())
        .zip(alphas.values())
        .map(|((c, p), &a)| {
            LayerParams::from_parts(
                c.spec().clone(),
                mix(a, c.weights(), p.weights()),
                mix(a, c.bias(), p.bias()),
            )
        })
        .collect();
    Ok(ParamSet::from_layers(layers))
}
