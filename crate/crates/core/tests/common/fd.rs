//! Finite-difference harnesses shared by the gradient tests and the acceptance run.

use super::*;
use meta_ensembler::coeffgen::{CoeffGenerator, GradFeatures};
use meta_ensembler::metaloop::outer_gradient;
use meta_ensembler::net::{loss_and_grads, Batch, LayerSpec, ParamSet};
use rand::Rng;

/// Largest relative error between analytic and finite-difference gradients of
/// the base learner, skipping coordinates whose perturbation crosses a ReLU kink.
pub fn base_learner_fd_error(seed: u64, mask: bool) -> (f64, usize) {
    let mut r = rng(seed);
    let specs = random_specs(&mut r, 1000);
    let p = random_params(&mut r, &specs, 1.0);
    let classes = specs.last().unwrap().out_dim;
    let mut b = random_batch(&mut r, specs[0].in_dim, classes, 8);
    let allowed: Vec<usize> = (0..classes.min(2)).collect();
    if mask {
        b.labels.iter_mut().for_each(|l| *l %= allowed.len());
    }
    let m = mask.then_some(allowed.as_slice());
    let (_, g) = loss_and_grads(&p, &b, m).unwrap();
    let (g, x) = (g.to_flat(), p.to_flat());
    let f = |v: &[f64]| oracle_loss(&specs, v, &b.inputs, &b.labels, m);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..x.len() {
        let (mut hi, mut lo) = (x.clone(), x.clone());
        hi[i] += 1e-4;
        lo[i] -= 1e-4;
        if relu_pattern(&specs, &hi, &b.inputs) != relu_pattern(&specs, &lo, &b.inputs) {
            continue;
        }
        worst = worst.max(rel_err(g[i], central_diff(&f, &x, i, 1e-4), 1e-10));
        checked += 1;
    }
    (worst, checked)
}

/// A random outer-loop instance: two congruent learners, a generator, features and a batch.
pub struct Instance {
    pub specs: Vec<LayerSpec>,
    pub current: ParamSet,
    pub previous: ParamSet,
    pub gen: CoeffGenerator,
    pub feats: GradFeatures,
    pub batch: Batch,
}

pub fn outer_instance(seed: u64, scalar: bool) -> Instance {
    let mut r = rng(seed);
    let specs = random_specs(&mut r, 300);
    let n = specs.len();
    let current = random_params(&mut r, &specs, 1.0);
    let previous = random_params(&mut r, &specs, 1.0);
    let hidden = r.random_range(2..=12);
    let n_out = if scalar { 1 } else { n };
    let mut gen = CoeffGenerator::init(n, hidden, n_out, seed).unwrap();
    let phi: Vec<f64> = gen.to_flat().iter().map(|_| r.random_range(-1.0..1.0)).collect();
    gen.set_flat(&phi).unwrap();
    assert!(gen.param_count() <= 500);
    let feats = GradFeatures::new((0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let batch = random_batch(&mut r, specs[0].in_dim, specs.last().unwrap().out_dim, 16);
    Instance {
        specs,
        current,
        previous,
        gen,
        feats,
        batch,
    }
}

pub fn outer_fd_error(inst: &Instance) -> f64 {
    let shape = (inst.gen.n_in(), inst.gen.hidden(), inst.gen.n_out());
    let analytic = outer_gradient(&inst.gen, &inst.feats, &inst.current, &inst.previous, &inst.batch)
        .unwrap()
        .to_flat();
    let (c, p) = (inst.current.to_flat(), inst.previous.to_flat());
    let f = |phi: &[f64]| {
        oracle_outer_loss(&inst.specs, &c, &p, shape, phi, inst.feats.values(), &inst.batch.inputs, &inst.batch.labels)
    };
    let phi = inst.gen.to_flat();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..phi.len() {
        let (mut hi, mut lo) = (phi.clone(), phi.clone());
        hi[i] += eps;
        lo[i] -= eps;
        let gen_kink = generator_hidden_signs(shape.0, shape.1, &hi, inst.feats.values())
            != generator_hidden_signs(shape.0, shape.1, &lo, inst.feats.values());
        let learner_kink = relu_pattern(&inst.specs, &oracle_blend(&inst.specs, &c, &p, shape, &hi, inst.feats.values()), &inst.batch.inputs)
            != relu_pattern(&inst.specs, &oracle_blend(&inst.specs, &c, &p, shape, &lo, inst.feats.values()), &inst.batch.inputs);
        if gen_kink || learner_kink {
            continue;
        }
        worst = worst.max(rel_err(analytic[i], central_diff(&f, &phi, i, eps), 1e-10));
    }
    worst
}
