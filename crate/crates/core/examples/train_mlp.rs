//! Train the base MLP on the first task of a synthetic stream and report accuracy.

use meta_ensembler::net::{accuracy, init_params, mlp_specs, sgd_train};
use meta_ensembler::streams::{make_synthetic_stream, SyntheticSpec};

fn main() -> meta_ensembler::Result<()> {
    let stream = make_synthetic_stream(&SyntheticSpec::default())?;
    let task = &stream.tasks()[0];
    let specs = mlp_specs(stream.input_dim(), &[64, 64], stream.num_classes_total());
    let init = init_params(&specs, 0)?;
    println!("{} parameters in {} layers", init.param_count(), init.num_layers());

    let test = task.test_set();
    println!("before training: {:.3}", accuracy(&init, &test, None)?);
    let trained = sgd_train(&init, &task.train, 0.05, 5, None)?;
    println!("after 5 epochs:  {:.3}", accuracy(&trained, &test, None)?);
    Ok(())
}
