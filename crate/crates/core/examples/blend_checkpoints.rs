//! Save two models as checkpoints, blend them layer by layer and reload the result.

use meta_ensembler::cli::{load_checkpoint, save_checkpoint};
use meta_ensembler::ensemble::{interpolate_layerwise, AlphaVector};
use meta_ensembler::net::{init_params, mlp_specs};

fn main() -> meta_ensembler::Result<()> {
    let dir = tempfile::tempdir()?;
    let specs = mlp_specs(8, &[16, 16], 4);
    let current = init_params(&specs, 1)?;
    let previous = init_params(&specs, 2)?;
    save_checkpoint(&current, &dir.path().join("current.ckpt"))?;
    save_checkpoint(&previous, &dir.path().join("previous.ckpt"))?;

    let c = load_checkpoint(&dir.path().join("current.ckpt"))?;
    let p = load_checkpoint(&dir.path().join("previous.ckpt"))?;
    // Keep more of the new model near the input and more of the old one near the head.
    let alphas = AlphaVector::new(vec![0.8, 0.5, 0.2])?;
    let fused = interpolate_layerwise(&c, &p, &alphas)?;
    let out = dir.path().join("fused.ckpt");
    save_checkpoint(&fused, &out)?;

    let reloaded = load_checkpoint(&out)?;
    assert_eq!(reloaded, fused);
    for (k, layer) in reloaded.layers().iter().enumerate() {
        println!(
            "{:<5} alpha {:.1}  first weight {:+.4} (current {:+.4}, previous {:+.4})",
            layer.name(),
            alphas.values()[k],
            layer.weights()[0],
            c.layers()[k].weights()[0],
            p.layers()[k].weights()[0]
        );
    }
    println!("checkpoint size: {} bytes", std::fs::metadata(&out)?.len());
    Ok(())
}
