//! Meta-learn per-layer coefficients between two task models on a memory buffer
//! and watch the outer loss fall.

use meta_ensembler::coeffgen::featurize;
use meta_ensembler::metaloop::{generator_for, meta_update, MetaConfig, Masking, Variant};
use meta_ensembler::net::{accuracy, init_params, loss_and_grads, mlp_specs, sgd_train};
use meta_ensembler::streams::{make_synthetic_stream, BufferPolicy, MemoryBuffer, MemoryEntry, SyntheticSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> meta_ensembler::Result<()> {
    let stream = make_synthetic_stream(&SyntheticSpec {
        num_tasks: 2,
        ..SyntheticSpec::default()
    })?;
    let cfg = MetaConfig::default();
    let specs = mlp_specs(stream.input_dim(), &[64, 64], stream.num_classes_total());
    let first = sgd_train(&init_params(&specs, 0)?, &stream.tasks()[0].train, cfg.base_lr, cfg.base_epochs, None)?;
    let second = sgd_train(&first, &stream.tasks()[1].train, cfg.base_lr, cfg.base_epochs, None)?;

    let mut buffer = MemoryBuffer::new(200)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for task in stream.tasks() {
        let set = task.train_set();
        let entries = (0..100).map(|i| MemoryEntry {
            input: set.inputs.row(i).to_vec(),
            label: set.labels[i],
            task_id: task.id,
        });
        buffer.add(entries, BufferPolicy::Reservoir, &mut rng);
    }

    let feats = featurize(&loss_and_grads(&second, &stream.tasks()[1].train_set(), None)?.1)?;
    let gen = generator_for(Variant::EMlLw, specs.len(), &cfg, 0)?;
    let (gen, trace) = meta_update(&gen, &feats, &second, &first, &buffer, &cfg, &Masking::none(), 0)?;
    let alphas = gen.generate(&feats)?;
    println!("outer loss {:.4} -> {:.4} over {} steps", trace[0], trace[trace.len() - 1], trace.len());
    println!("learned alphas {:.3?}", alphas.values());

    let fused = meta_ensembler::ensemble::interpolate_layerwise(&second, &first, &alphas)?;
    let memory = buffer.all()?;
    println!("memory accuracy: trained {:.3}, fused {:.3}", accuracy(&second, &memory, None)?, accuracy(&fused, &memory, None)?);
    Ok(())
}
