//! Fill reservoir and ring buffers from a long stream and compare what they keep.

use meta_ensembler::streams::{BufferPolicy, MemoryBuffer, MemoryEntry};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> meta_ensembler::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for policy in [BufferPolicy::Reservoir, BufferPolicy::Ring] {
        let mut buffer = MemoryBuffer::new(50)?;
        for task in 0..5 {
            let entries = (0..200).map(|i| MemoryEntry {
                input: vec![i as f64],
                label: task * 2 + i % 2,
                task_id: task,
            });
            buffer.add(entries, policy, &mut rng);
        }
        let mut per_task = [0usize; 5];
        buffer.entries().iter().for_each(|e| per_task[e.task_id] += 1);
        println!("{policy:?}: {} of {} seen kept, per task {per_task:?}", buffer.len(), buffer.seen_count());
        let batch = buffer.sample(8, &mut rng)?;
        println!("  sampled labels {:?}", batch.labels);
    }
    Ok(())
}
