//! Write a tiny IDX image/label pair to disk and load it as a two-task stream.

use meta_ensembler::streams::{encode_idx_images, encode_idx_labels, ingest_idx, Protocol};

fn main() -> meta_ensembler::Result<()> {
    let dir = tempfile::tempdir()?;
    let (rows, cols) = (4, 4);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..80u8 {
        let class = i % 4;
        // Each class lights up a different quadrant.
        let image: Vec<u8> = (0..rows * cols)
            .map(|p| {
                let (r, c) = (p / cols, p % cols);
                let quadrant = (r / 2) * 2 + c / 2;
                if quadrant == class as usize { 200 + i % 50 } else { i % 30 }
            })
            .collect();
        images.push(image);
        labels.push(class);
    }
    let img_path = dir.path().join("images.idx");
    let lbl_path = dir.path().join("labels.idx");
    std::fs::write(&img_path, encode_idx_images(rows, cols, &images))?;
    std::fs::write(&lbl_path, encode_idx_labels(&labels))?;

    let stream = ingest_idx(&img_path, &lbl_path, &[vec![0, 1], vec![2, 3]], Protocol::Cil, 0, 10)?;
    println!("{} tasks, input dim {}, {} classes", stream.len(), stream.input_dim(), stream.num_classes_total());
    for task in stream.tasks() {
        let first = task.train_set();
        let max = first.inputs.row(0).iter().cloned().fold(0.0, f64::max);
        println!(
            "task {}: classes {:?}, {} train / {} test, first image max pixel {max:.3}",
            task.id,
            task.classes,
            task.train_len(),
            task.test_set().len()
        );
    }
    Ok(())
}
