//! The rehearsal buffer: reservoir sampling under a fixed budget.
//!
//! Every training example is offered to the buffer exactly once. With the
//! reservoir policy the buffer ends up holding a uniform sample of
//! everything seen so far, no matter how long the stream ran — early tasks
//! are never starved out, they just shrink proportionally.
//!
//! Run with: cargo run --example reservoir_memory

use adrm::data::{make_task_stream, synthetic_dataset};
use adrm::memory::{BufferPolicy, MemoryBuffer};
use adrm::rng::SeedBlock;
use adrm::Result;

fn main() -> Result<()> {
    let dataset = synthetic_dataset(16, 400, 100, 10, 0.12, 77)?;
    let stream = make_task_stream(&dataset, 5, None)?;
    let mut rng = SeedBlock::stream(123);

    let mut buffer = MemoryBuffer::new(200, BufferPolicy::Reservoir)?;
    println!("budget {} slots, reservoir policy\n", buffer.budget());

    for task in &stream.tasks {
        let (images, labels) = dataset.train.gather(&task.train_subset);
        buffer.offer_all(&images, &labels, task.task_id, &mut rng)?;

        let counts = buffer.class_counts();
        let per_class: Vec<String> = counts.iter().map(|(c, n)| format!("{c}:{n}")).collect();
        println!(
            "after task {} ({} offered so far): {} held, per class {{{}}}",
            task.task_id,
            buffer.seen_count(),
            buffer.len(),
            per_class.join(" ")
        );
    }

    // Uniformity check: after 4000 offers each class should hold roughly
    // budget / n_classes = 20 slots.
    let counts = buffer.class_counts();
    let min = counts.values().min().unwrap();
    let max = counts.values().max().unwrap();
    println!("\nfinal spread: min {min} / max {max} slots per class (uniform would be 20)");

    // Rehearsal draws. A batch no bigger than the buffer samples without
    // replacement; the buffer itself is untouched.
    let batch = buffer.sample(64, &mut rng)?;
    println!(
        "sampled a rehearsal batch of {} images, first labels {:?}",
        batch.labels.len(),
        &batch.labels[..8.min(batch.labels.len())]
    );

    // The class-balanced policy instead evicts from whichever class holds
    // the most slots, pinning the spread tight by construction.
    let mut balanced = MemoryBuffer::new(200, BufferPolicy::ClassBalanced)?;
    let mut rng2 = SeedBlock::stream(123);
    for task in &stream.tasks {
        let (images, labels) = dataset.train.gather(&task.train_subset);
        balanced.offer_all(&images, &labels, task.task_id, &mut rng2)?;
    }
    let counts = balanced.class_counts();
    let min = counts.values().min().unwrap();
    let max = counts.values().max().unwrap();
    println!("class-balanced policy spread: min {min} / max {max} slots per class");
    Ok(())
}
