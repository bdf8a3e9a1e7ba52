//! Reference implementations used as test oracles.
//!
//! The oracles below never call the library's numerical code: forward passes, losses
//! and the generator are re-implemented with plain loops so that agreement is
//! evidence of correctness rather than of shared bugs.

#![allow(dead_code)]

pub mod fd;

use meta_ensembler::net::{Activation, Batch, LayerSpec, ParamSet};
use meta_ensembler::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weights and bias of layer `k` inside a flat buffer.
fn layer_slices<'a>(specs: &[LayerSpec], flat: &'a [f64], k: usize) -> (&'a [f64], &'a [f64]) {
    let offset: usize = specs[..k].iter().map(|s| s.in_dim * s.out_dim + s.out_dim).sum();
    let s = &specs[k];
    let nw = s.in_dim * s.out_dim;
    (&flat[offset..offset + nw], &flat[offset + nw..offset + nw + s.out_dim])
}

/// Pre-activations of every layer for one input row.
pub fn oracle_preacts(specs: &[LayerSpec], flat: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let mut h = x.to_vec();
    let mut out = Vec::new();
    for (k, s) in specs.iter().enumerate() {
        let (w, b) = layer_slices(specs, flat, k);
        let mut z = vec![0.0; s.out_dim];
        for o in 0..s.out_dim {
            let mut acc = b[o];
            for i in 0..s.in_dim {
                acc += w[o * s.in_dim + i] * h[i];
            }
            z[o] = acc;
        }
        h = match s.activation {
            Activation::Relu => z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            Activation::Identity => z.clone(),
        };
        out.push(z);
    }
    out
}

pub fn oracle_logits(specs: &[LayerSpec], flat: &[f64], x: &[f64]) -> Vec<f64> {
    let pre = oracle_preacts(specs, flat, x);
    let last = specs.last().unwrap();
    let z = pre.last().unwrap().clone();
    match last.activation {
        Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
        Activation::Identity => z,
    }
}

/// Mean softmax cross-entropy; classes outside `mask` are dropped from the softmax.
pub fn oracle_loss(specs: &[LayerSpec], flat: &[f64], inputs: &Matrix, labels: &[usize], mask: Option<&[usize]>) -> f64 {
    let mut total = 0.0;
    for r in 0..inputs.rows() {
        let logits = oracle_logits(specs, flat, inputs.row(r));
        let allowed: Vec<usize> = match mask {
            Some(m) => m.to_vec(),
            None => (0..logits.len()).collect(),
        };
        let max = allowed.iter().map(|&c| logits[c]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = allowed.iter().map(|&c| (logits[c] - max).exp()).sum();
        total += -(logits[labels[r]] - max - sum.ln());
    }
    total / inputs.rows() as f64
}

/// Signs of every hidden ReLU pre-activation over a batch; a change between two
/// parameter vectors means a finite difference straddles a kink.
pub fn relu_pattern(specs: &[LayerSpec], flat: &[f64], inputs: &Matrix) -> Vec<bool> {
    let mut pattern = Vec::new();
    for r in 0..inputs.rows() {
        for (k, z) in oracle_preacts(specs, flat, inputs.row(r)).iter().enumerate() {
            if specs[k].activation == Activation::Relu {
                pattern.extend(z.iter().map(|&v| v > 0.0));
            }
        }
    }
    pattern
}

/// Central difference of `f` in coordinate `i`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, eps: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += eps;
    minus[i] -= eps;
    (f(&plus) - f(&minus)) / (2.0 * eps)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// A random MLP with `relu` hidden layers and an identity head.
pub fn random_specs(rng: &mut ChaCha8Rng, max_params: usize) -> Vec<LayerSpec> {
    loop {
        let input = rng.random_range(2..=6);
        let depth = rng.random_range(1..=3);
        let classes = rng.random_range(2..=5);
        let mut dims = vec![input];
        for _ in 0..depth - 1 {
            dims.push(rng.random_range(2..=12));
        }
        dims.push(classes);
        let specs: Vec<LayerSpec> = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let last = k == dims.len() - 2;
                LayerSpec::new(
                    if last { "head".to_string() } else { format!("fc{}", k + 1) },
                    w[0],
                    w[1],
                    if last { Activation::Identity } else { Activation::Relu },
                )
            })
            .collect();
        let count: usize = specs.iter().map(|s| s.in_dim * s.out_dim + s.out_dim).sum();
        if count <= max_params {
            return specs;
        }
    }
}

pub fn random_params(rng: &mut ChaCha8Rng, specs: &[LayerSpec], scale: f64) -> ParamSet {
    let count: usize = specs.iter().map(|s| s.in_dim * s.out_dim + s.out_dim).sum();
    let flat: Vec<f64> = (0..count).map(|_| rng.random_range(-scale..scale)).collect();
    ParamSet::from_flat(specs, &flat).unwrap()
}

pub fn random_batch(rng: &mut ChaCha8Rng, dim: usize, classes: usize, n: usize) -> Batch {
    let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Batch::new(Matrix::from_vec(n, dim, data).unwrap(), labels, None).unwrap()
}

/// Independent evaluation of the generator: `sigmoid(w2 relu(w1 f + b1) + b2)`
/// from its flat parameters (`w1, b1, w2, b2`).
pub fn oracle_generate(n_in: usize, hidden: usize, n_out: usize, phi: &[f64], f: &[f64]) -> Vec<f64> {
    let (w1, rest) = phi.split_at(hidden * n_in);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(n_out * hidden);
    let h: Vec<f64> = (0..hidden)
        .map(|j| (b1[j] + (0..n_in).map(|i| w1[j * n_in + i] * f[i]).sum::<f64>()).max(0.0))
        .collect();
    (0..n_out)
        .map(|o| {
            let z = b2[o] + (0..hidden).map(|j| w2[o * hidden + j] * h[j]).sum::<f64>();
            1.0 / (1.0 + (-z).exp())
        })
        .collect()
}

/// Hidden pre-activations of the generator, for kink detection.
pub fn generator_hidden_signs(n_in: usize, hidden: usize, phi: &[f64], f: &[f64]) -> Vec<bool> {
    let (w1, rest) = phi.split_at(hidden * n_in);
    let b1 = &rest[..hidden];
    (0..hidden)
        .map(|j| b1[j] + (0..n_in).map(|i| w1[j * n_in + i] * f[i]).sum::<f64>() > 0.0)
        .collect()
}

/// Independent outer loss: blend flat parameter vectors layer by layer with
/// the oracle generator's coefficients, then evaluate the oracle loss.
#[allow(clippy::too_many_arguments)]
pub fn oracle_outer_loss(
    specs: &[LayerSpec],
    current: &[f64],
    previous: &[f64],
    gen_shape: (usize, usize, usize),
    phi: &[f64],
    feats: &[f64],
    inputs: &Matrix,
    labels: &[usize],
) -> f64 {
    let fused = oracle_blend(specs, current, previous, gen_shape, phi, feats);
    oracle_loss(specs, &fused, inputs, labels, None)
}

pub fn oracle_blend(
    specs: &[LayerSpec],
    current: &[f64],
    previous: &[f64],
    (n_in, hidden, n_out): (usize, usize, usize),
    phi: &[f64],
    feats: &[f64],
) -> Vec<f64> {
    let alphas = oracle_generate(n_in, hidden, n_out, phi, feats);
    let mut fused = Vec::with_capacity(current.len());
    let mut offset = 0;
    for (k, s) in specs.iter().enumerate() {
        let a = if n_out == 1 { alphas[0] } else { alphas[k] };
        let len = s.in_dim * s.out_dim + s.out_dim;
        for i in offset..offset + len {
            fused.push(a * current[i] + (1.0 - a) * previous[i]);
        }
        offset += len;
    }
    fused
}
