//! Turn the gradient of a model into per-layer features and map them to mixing coefficients.

use meta_ensembler::coeffgen::{featurize, CoeffGenerator};
use meta_ensembler::net::{init_params, loss_and_grads, mlp_specs};
use meta_ensembler::streams::{make_synthetic_stream, SyntheticSpec};

fn main() -> meta_ensembler::Result<()> {
    let stream = make_synthetic_stream(&SyntheticSpec::default())?;
    let specs = mlp_specs(stream.input_dim(), &[64, 64], stream.num_classes_total());
    let params = init_params(&specs, 0)?;
    let (loss, grads) = loss_and_grads(&params, &stream.tasks()[1].train_set(), None)?;
    let feats = featurize(&grads)?;
    let shown: Vec<String> = feats.values().iter().map(|v| format!("{v:.3e}")).collect();
    println!("loss {loss:.4}, features {shown:?}");

    let n = specs.len();
    for (name, gen) in [
        ("random init", CoeffGenerator::init(n, 4 * n, n, 7)?),
        ("zeros", CoeffGenerator::zeros(n, 4 * n, n)?),
        ("constant 0.3", CoeffGenerator::constant(n, 4 * n, n, 0.3)?),
    ] {
        let alphas = gen.generate(&feats)?;
        println!("{name:<13} alphas {:.6?}", alphas.values());
    }
    Ok(())
}
