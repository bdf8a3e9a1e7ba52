//! Deterministic multi-layer perceptron used as the base learner.
//!
//! Every layer is a dense affine map followed by an element-wise activation:
//!
//! - `z = W x + b`
//! - `y = activation(z)`
//!
//! Weights are row-major with shape `(out_dim, in_dim)`. The model is a plain
//! value ([`ParamSet`]); training returns a new value and never mutates its input.
//! Loss is mean softmax cross-entropy with optional logit masking, which is how
//! task-incremental evaluation restricts the head to one task's classes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            name: name.into(),
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Layer specs for an MLP classifier: ReLU hidden layers `fc1..fcK` and an
/// identity `head`.
pub fn mlp_specs(input_dim: usize, hidden: &[usize], num_classes: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input_dim;
    for (k, &width) in hidden.iter().enumerate() {
        specs.push(LayerSpec::new(format!("fc{}", k + 1), prev, width, Activation::Relu));
        prev = width;
    }
    specs.push(LayerSpec::new("head", prev, num_classes, Activation::Identity));
    specs
}

/// Checks the shape chain and name uniqueness of a layer sequence.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::config("a model needs at least one layer"));
    }
    for (k, spec) in specs.iter().enumerate() {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::config(format!("layer '{}' has a zero dimension", spec.name)));
        }
        if k > 0 && specs[k - 1].out_dim != spec.in_dim {
            return Err(Error::config(format!(
                "layer '{}' expects {} inputs but '{}' produces {}",
                spec.name,
                spec.in_dim,
                specs[k - 1].name,
                specs[k - 1].out_dim
            )));
        }
        if specs[..k].iter().any(|s| s.name == spec.name) {
            return Err(Error::config(format!("duplicate layer name '{}'", spec.name)));
        }
    }
    Ok(())
}

/// Parameters of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    spec: LayerSpec,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LayerParams {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// Row-major `(out_dim, in_dim)`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub(crate) fn from_parts(spec: LayerSpec, weights: Vec<f64>, bias: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), spec.in_dim * spec.out_dim);
        debug_assert_eq!(bias.len(), spec.out_dim);
        Self { spec, weights, bias }
    }

    /// Weight entries followed by bias entries.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().chain(self.bias.iter()).copied()
    }
}

/// Ordered per-layer parameters of the base learner.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layers: Vec<LayerParams>,
}

impl ParamSet {
    /// Builds a parameter set from specs and a flat value buffer laid out
    /// layer by layer as weights (row-major) then bias.
    pub fn from_flat(specs: &[LayerSpec], values: &[f64]) -> Result<Self> {
        validate_specs(specs)?;
        let expected: usize = specs.iter().map(|s| s.in_dim * s.out_dim + s.out_dim).sum();
        if values.len() != expected {
            return Err(Error::shape(format!(
                "expected {expected} parameter values, got {}",
                values.len()
            )));
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let nw = spec.in_dim * spec.out_dim;
            let weights = values[offset..offset + nw].to_vec();
            offset += nw;
            let bias = values[offset..offset + spec.out_dim].to_vec();
            offset += spec.out_dim;
            layers.push(LayerParams::from_parts(spec.clone(), weights, bias));
        }
        let params = Self { layers };
        params.check_finite()?;
        Ok(params)
    }

    pub(crate) fn from_layers(layers: Vec<LayerParams>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(LayerParams::iter).collect()
    }

    /// Same layer names, shapes and activations.
    pub fn is_congruent(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.spec == b.spec)
    }

    pub fn check_finite(&self) -> Result<()> {
        for layer in &self.layers {
            if !layer.iter().all(f64::is_finite) {
                return Err(Error::data(format!("non-finite parameter in layer '{}'", layer.name())));
            }
        }
        Ok(())
    }

    /// In-place `p -= lr * g`. Callers own the value; the public training API
    /// works on clones.
    pub(crate) fn apply_gradient(&mut self, grads: &GradSet, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, dw) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= lr * dw;
            }
            for (b, db) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * db;
            }
        }
    }
}

/// A labelled mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub task_id: Option<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>, task_id: Option<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::data("a batch needs at least one example"));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self {
            inputs,
            labels,
            task_id,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Subset of rows, keeping the task id.
    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            task_id: self.task_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().chain(self.bias.iter()).copied()
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-layer gradients, shape-congruent with the [`ParamSet`] they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    layers: Vec<LayerGrad>,
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn from_layers(layers: Vec<LayerGrad>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerGrad] {
        &self.layers
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(LayerGrad::iter).collect()
    }

    pub fn is_congruent_with(&self, params: &ParamSet) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.weights.len() == p.weights.len() && g.bias.len() == p.bias.len())
    }

    /// `self += scale * other`.
    pub(crate) fn add_scaled(&mut self, other: &GradSet, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }
}

/// Weights uniform in `±1/sqrt(in_dim)`, biases zero.
pub fn init_params(specs: &[LayerSpec], seed: u64) -> Result<ParamSet> {
    validate_specs(specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .iter()
        .map(|spec| {
            let scale = 1.0 / (spec.in_dim as f64).sqrt();
            let weights = (0..spec.in_dim * spec.out_dim)
                .map(|_| rng.random_range(-scale..scale))
                .collect();
            LayerParams::from_parts(spec.clone(), weights, vec![0.0; spec.out_dim])
        })
        .collect();
    Ok(ParamSet { layers })
}

struct Trace {
    /// `activations[0]` is the input; `activations[k + 1]` is the output of layer `k`.
    activations: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

fn forward_trace(p: &ParamSet, inputs: &Matrix) -> Result<Trace> {
    if inputs.cols() != p.input_dim() {
        return Err(Error::shape(format!(
            "input width {} does not match first layer in_dim {}",
            inputs.cols(),
            p.input_dim()
        )));
    }
    let mut activations = Vec::with_capacity(p.layers.len() + 1);
    let mut pre_activations = Vec::with_capacity(p.layers.len());
    activations.push(inputs.clone());
    for layer in &p.layers {
        let x = activations.last().expect("input pushed above");
        let (n_in, n_out) = (layer.spec.in_dim, layer.spec.out_dim);
        let mut z = Matrix::zeros(x.rows(), n_out);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let zr = z.row_mut(r);
            for (o, zo) in zr.iter_mut().enumerate() {
                let w = &layer.weights[o * n_in..(o + 1) * n_in];
                *zo = layer.bias[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let mut a = z.clone();
        for r in 0..a.rows() {
            for v in a.row_mut(r) {
                *v = layer.spec.activation.apply(*v);
            }
        }
        pre_activations.push(z);
        activations.push(a);
    }
    Ok(Trace {
        activations,
        pre_activations,
    })
}

/// Logits of the model on a `batch x in_dim` input matrix.
pub fn forward(p: &ParamSet, inputs: &Matrix) -> Result<Matrix> {
    let mut trace = forward_trace(p, inputs)?;
    Ok(trace.activations.pop().expect("at least one layer"))
}

fn check_mask(mask: &[usize], num_classes: usize) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::data("class mask is empty"));
    }
    if let Some(&c) = mask.iter().find(|&&c| c >= num_classes) {
        return Err(Error::data(format!("masked class {c} outside 0..{num_classes}")));
    }
    Ok(())
}

fn check_labels(labels: &[usize], num_classes: usize, mask: Option<&[usize]>) -> Result<()> {
    for &y in labels {
        if y >= num_classes {
            return Err(Error::data(format!("label {y} outside 0..{num_classes}")));
        }
        if let Some(m) = mask {
            if !m.contains(&y) {
                return Err(Error::data(format!("label {y} is not in the class mask {m:?}")));
            }
        }
    }
    Ok(())
}

/// `allowed[c]` is true for classes that take part in the softmax.
fn allowed_classes(num_classes: usize, mask: Option<&[usize]>) -> Vec<bool> {
    match mask {
        None => vec![true; num_classes],
        Some(m) => {
            let mut allowed = vec![false; num_classes];
            for &c in m {
                allowed[c] = true;
            }
            allowed
        }
    }
}

/// Mean softmax cross-entropy over the batch and its exact gradient.
///
/// Classes outside `masked_classes` get `-inf` logits, so they carry zero
/// probability and zero gradient.
pub fn loss_and_grads(p: &ParamSet, b: &Batch, masked_classes: Option<&[usize]>) -> Result<(f64, GradSet)> {
    let num_classes = p.output_dim();
    if let Some(m) = masked_classes {
        check_mask(m, num_classes)?;
    }
    check_labels(&b.labels, num_classes, masked_classes)?;
    let allowed = allowed_classes(num_classes, masked_classes);

    let trace = forward_trace(p, &b.inputs)?;
    let logits = trace.activations.last().expect("at least one layer");
    let batch = b.len();
    let inv_batch = 1.0 / batch as f64;

    let mut loss = 0.0;
    let mut delta = Matrix::zeros(batch, num_classes);
    for r in 0..batch {
        let row = logits.row(r);
        let max = row
            .iter()
            .zip(&allowed)
            .filter(|(_, &a)| a)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row
            .iter()
            .zip(&allowed)
            .filter(|(_, &a)| a)
            .map(|(&v, _)| (v - max).exp())
            .sum();
        let log_z = max + sum_exp.ln();
        let y = b.labels[r];
        loss += log_z - row[y];
        let d = delta.row_mut(r);
        for c in 0..num_classes {
            if allowed[c] {
                d[c] = (row[c] - log_z).exp() * inv_batch;
            }
        }
        d[y] -= inv_batch;
    }
    loss *= inv_batch;

    let mut grads = GradSet::zeros_like(p);
    for k in (0..p.layers.len()).rev() {
        let layer = &p.layers[k];
        let (n_in, n_out) = (layer.spec.in_dim, layer.spec.out_dim);
        let z = &trace.pre_activations[k];
        for r in 0..batch {
            let zr = z.row(r);
            for (d, &zv) in delta.row_mut(r).iter_mut().zip(zr) {
                *d *= layer.spec.activation.derivative(zv);
            }
        }
        let x = &trace.activations[k];
        let g = &mut grads.layers[k];
        for r in 0..batch {
            let dr = delta.row(r);
            let xr = x.row(r);
            for o in 0..n_out {
                let d = dr[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                for (gw, &xv) in g.weights[o * n_in..(o + 1) * n_in].iter_mut().zip(xr) {
                    *gw += d * xv;
                }
            }
        }
        if k > 0 {
            let mut prev = Matrix::zeros(batch, n_in);
            for r in 0..batch {
                let dr = delta.row(r);
                let pr = prev.row_mut(r);
                for o in 0..n_out {
                    let d = dr[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (pv, &w) in pr.iter_mut().zip(&layer.weights[o * n_in..(o + 1) * n_in]) {
                        *pv += d * w;
                    }
                }
            }
            delta = prev;
        }
    }
    Ok((loss, grads))
}

/// Example-weighted mean loss and gradient over several batches, each with its
/// own class mask. Equivalent to one call on the concatenated batch when all
/// masks agree.
pub fn combined_loss_and_grads(p: &ParamSet, parts: &[(&Batch, Option<&[usize]>)]) -> Result<(f64, GradSet)> {
    let total: usize = parts.iter().map(|(b, _)| b.len()).sum();
    if total == 0 {
        return Err(Error::data("no examples to compute a loss on"));
    }
    let mut loss = 0.0;
    let mut grads = GradSet::zeros_like(p);
    for (batch, mask) in parts {
        let weight = batch.len() as f64 / total as f64;
        let (l, g) = loss_and_grads(p, batch, *mask)?;
        loss += weight * l;
        grads.add_scaled(&g, weight);
    }
    Ok((loss, grads))
}

/// Arg-max predictions, restricted to `mask` when given.
pub fn predict(p: &ParamSet, inputs: &Matrix, mask: Option<&[usize]>) -> Result<Vec<usize>> {
    let num_classes = p.output_dim();
    if let Some(m) = mask {
        check_mask(m, num_classes)?;
    }
    let allowed = allowed_classes(num_classes, mask);
    let logits = forward(p, inputs)?;
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = usize::MAX;
            let mut best_v = f64::NEG_INFINITY;
            for c in 0..num_classes {
                if allowed[c] && (best == usize::MAX || row[c] > best_v) {
                    best = c;
                    best_v = row[c];
                }
            }
            best
        })
        .collect())
}

/// Fraction of correctly classified examples.
pub fn accuracy(p: &ParamSet, b: &Batch, mask: Option<&[usize]>) -> Result<f64> {
    let preds = predict(p, &b.inputs, mask)?;
    let correct = preds.iter().zip(&b.labels).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / b.len() as f64)
}

/// One SGD step on a prepared set of batch parts; `step` is reported on divergence.
pub(crate) fn sgd_step(p: &mut ParamSet, parts: &[(&Batch, Option<&[usize]>)], lr: f64, step: usize) -> Result<f64> {
    let (loss, grads) = combined_loss_and_grads(p, parts)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { step, task: None });
    }
    p.apply_gradient(&grads, lr);
    if p.check_finite().is_err() {
        return Err(Error::Divergence { step, task: None });
    }
    Ok(loss)
}

/// Plain constant-rate SGD over `data` in the given order for `epochs` passes.
pub fn sgd_train(
    p: &ParamSet,
    data: &[Batch],
    lr: f64,
    epochs: usize,
    masked_classes: Option<&[usize]>,
) -> Result<ParamSet> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::config(format!("learning rate must be positive, got {lr}")));
    }
    if epochs == 0 {
        return Err(Error::config("epochs must be at least 1"));
    }
    let mut params = p.clone();
    let mut step = 0;
    for _ in 0..epochs {
        for batch in data {
            sgd_step(&mut params, &[(batch, masked_classes)], lr, step)?;
            step += 1;
        }
    }
    Ok(params)
}
