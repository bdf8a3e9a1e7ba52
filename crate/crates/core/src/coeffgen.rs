//! Mixing-coefficient generator.
//!
//! A trained model's gradient is summarised as one statistic per layer (the
//! mean over all weight and bias entries of that layer). The generator is a
//! two-layer perceptron
//!
//! ```text
//! alpha = sigmoid(W2 · relu(W1 · features + b1) + b2)
//! ```
//!
//! whose output width is either the layer count (one coefficient per layer)
//! or 1 (a single coefficient broadcast to all layers).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::AlphaVector;
use crate::error::{Error, Result};
use crate::net::GradSet;

/// Smallest and largest values the squashed output may take, keeping it inside
/// the open unit interval even when the logistic saturates in `f64`.
const ALPHA_MIN: f64 = f64::MIN_POSITIVE;
const ALPHA_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Arithmetic mean of the layer's gradient entries.
    #[default]
    Mean,
    /// Mean of absolute values.
    MeanAbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    /// Rescale the feature vector to unit max-norm.
    pub normalize: bool,
}

/// One gradient statistic per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradFeatures(Vec<f64>);

impl GradFeatures {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("gradient features must be finite"));
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
}

/// Per-layer mean of all gradient entries.
pub fn featurize(grads: &GradSet) -> Result<GradFeatures> {
    featurize_with(grads, &FeatureConfig::default())
}

pub fn featurize_with(grads: &GradSet, cfg: &FeatureConfig) -> Result<GradFeatures> {
    let mut values = Vec::with_capacity(grads.layers().len());
    for (j, layer) in grads.layers().iter().enumerate() {
        if layer.is_empty() {
            return Err(Error::data(format!("gradient layer {j} is empty")));
        }
        let sum: f64 = match cfg.kind {
            FeatureKind::Mean => layer.iter().sum(),
            FeatureKind::MeanAbs => layer.iter().map(f64::abs).sum(),
        };
        values.push(sum / layer.len() as f64);
    }
    if cfg.normalize {
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale > 0.0 {
            values.iter_mut().for_each(|v| *v /= scale);
        }
    }
    GradFeatures::new(values)
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).clamp(ALPHA_MIN, ALPHA_MAX)
}

/// Two-affine-layer generator `g_phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffGenerator {
    n_in: usize,
    hidden: usize,
    n_out: usize,
    /// `hidden x n_in`, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// `n_out x hidden`, row-major.
    w2: Vec<f64>,
    b2: Vec<f64>,
    /// A frozen generator ignores updates.
    #[serde(default)]
    frozen: bool,
}

/// Gradient with respect to every generator parameter, same layout as the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl GeneratorGrad {
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }
}

struct GenTrace {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    alpha: Vec<f64>,
}

/// Layer-wise generator: `n` inputs, `n` outputs.
pub fn gen_init(n: usize, h: usize, seed: u64) -> Result<CoeffGenerator> {
    CoeffGenerator::init(n, h, n, seed)
}

impl CoeffGenerator {
    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases.
    pub fn init(n_in: usize, hidden: usize, n_out: usize, seed: u64) -> Result<Self> {
        let mut gen = Self::zeros(n_in, hidden, n_out)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s1 = 1.0 / (n_in as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        gen.w1.iter_mut().for_each(|w| *w = rng.random_range(-s1..s1));
        gen.w2.iter_mut().for_each(|w| *w = rng.random_range(-s2..s2));
        Ok(gen)
    }

    /// All-zero generator; emits 0.5 everywhere.
    pub fn zeros(n_in: usize, hidden: usize, n_out: usize) -> Result<Self> {
        if n_in == 0 || hidden == 0 || n_out == 0 {
            return Err(Error::config("generator widths must be at least 1"));
        }
        Ok(Self {
            n_in,
            hidden,
            n_out,
            w1: vec![0.0; hidden * n_in],
            b1: vec![0.0; hidden],
            w2: vec![0.0; n_out * hidden],
            b2: vec![0.0; n_out],
            frozen: false,
        })
    }

    /// A frozen generator whose output is `sigmoid(logit(value))` regardless of input.
    pub fn constant(n_in: usize, hidden: usize, n_out: usize, value: f64) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::config(format!("constant generator output {value} outside (0, 1)")));
        }
        let mut gen = Self::zeros(n_in, hidden, n_out)?;
        let logit = (value / (1.0 - value)).ln();
        gen.b2.iter_mut().for_each(|b| *b = logit);
        gen.frozen = true;
        Ok(gen)
    }

    /// Builds a generator from explicit parameter blocks.
    pub fn from_parts(n_in: usize, hidden: usize, n_out: usize, w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: Vec<f64>) -> Result<Self> {
        let mut gen = Self::zeros(n_in, hidden, n_out)?;
        gen.set_flat(&[w1, b1, w2, b2].concat())?;
        Ok(gen)
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameters in `w1, b1, w2, b2` order.
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::shape(format!(
                "generator has {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("generator parameters must be finite"));
        }
        let (w1, rest) = values.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, b2) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2.copy_from_slice(b2);
        Ok(())
    }

    fn trace(&self, feats: &GradFeatures) -> Result<GenTrace> {
        if feats.len() != self.n_in {
            return Err(Error::shape(format!(
                "generator expects {} features, got {}",
                self.n_in,
                feats.len()
            )));
        }
        let x = feats.values();
        let hidden_pre: Vec<f64> = (0..self.hidden)
            .map(|k| {
                let row = &self.w1[k * self.n_in..(k + 1) * self.n_in];
                self.b1[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        let hidden: Vec<f64> = hidden_pre.iter().map(|z| z.max(0.0)).collect();
        let alpha = (0..self.n_out)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                sigmoid(self.b2[o] + row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>())
            })
            .collect();
        Ok(GenTrace {
            hidden_pre,
            hidden,
            alpha,
        })
    }

    /// Coefficients for `feats`; length equals the generator's output width.
    pub fn generate(&self, feats: &GradFeatures) -> Result<AlphaVector> {
        AlphaVector::new(self.trace(feats)?.alpha)
    }

    /// Single coefficient from a width-1 generator.
    pub fn generate_scalar(&self, feats: &GradFeatures) -> Result<f64> {
        if self.n_out != 1 {
            return Err(Error::shape(format!(
                "scalar generation needs output width 1, generator has {}",
                self.n_out
            )));
        }
        Ok(self.trace(feats)?.alpha[0])
    }

    /// Vector-Jacobian product `(d alpha / d phi)^T · d_alpha`.
    pub fn backward(&self, feats: &GradFeatures, d_alpha: &[f64]) -> Result<GeneratorGrad> {
        if d_alpha.len() != self.n_out {
            return Err(Error::shape(format!(
                "upstream gradient has {} entries, generator emits {}",
                d_alpha.len(),
                self.n_out
            )));
        }
        let t = self.trace(feats)?;
        let d_out: Vec<f64> = d_alpha
            .iter()
            .zip(&t.alpha)
            .map(|(g, a)| g * a * (1.0 - a))
            .collect();

        let mut w2 = vec![0.0; self.w2.len()];
        let mut d_hidden = vec![0.0; self.hidden];
        for (o, &d) in d_out.iter().enumerate() {
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            for k in 0..self.hidden {
                w2[o * self.hidden + k] = d * t.hidden[k];
                d_hidden[k] += d * row[k];
            }
        }
        let b1: Vec<f64> = d_hidden
            .iter()
            .zip(&t.hidden_pre)
            .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
            .collect();
        let x = feats.values();
        let mut w1 = vec![0.0; self.w1.len()];
        for (k, &d) in b1.iter().enumerate() {
            for (i, &xi) in x.iter().enumerate() {
                w1[k * self.n_in + i] = d * xi;
            }
        }
        Ok(GeneratorGrad { w1, b1, w2, b2: d_out })
    }

    /// Full Jacobian `d alpha_o / d phi_p`, one row per output.
    pub fn jacobian(&self, feats: &GradFeatures) -> Result<Vec<Vec<f64>>> {
        (0..self.n_out)
            .map(|o| {
                let mut e = vec![0.0; self.n_out];
                e[o] = 1.0;
                Ok(self.backward(feats, &e)?.to_flat())
            })
            .collect()
    }

    /// `phi -= lr * grad`; no-op on a frozen generator.
    pub fn apply_gradient(&mut self, grad: &GeneratorGrad, lr: f64) {
        if self.frozen {
            return;
        }
        let step = |p: &mut [f64], g: &[f64]| p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        step(&mut self.w1, &grad.w1);
        step(&mut self.b1, &grad.b1);
        step(&mut self.w2, &grad.w2);
        step(&mut self.b2, &grad.b2);
    }
}
