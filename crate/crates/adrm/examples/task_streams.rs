//! Splitting a dataset into a class-incremental task stream.
//!
//! A task stream partitions the label space into disjoint groups that arrive
//! one after another. The model only ever sees the current task's training
//! data (plus whatever rehearsal memory holds), which is what makes
//! catastrophic forgetting measurable in the first place.
//!
//! Run with: cargo run --example task_streams

use adrm::data::{make_task_stream, synthetic_dataset};
use adrm::Result;

fn main() -> Result<()> {
    // 10 oriented-grating classes at 16x16 — the desk-scale benchmark.
    let dataset = synthetic_dataset(16, 400, 100, 10, 0.12, 77)?;
    println!(
        "dataset: {} train / {} test images, {} classes, shape {:?}",
        dataset.train.len(),
        dataset.test.len(),
        dataset.n_classes(),
        dataset.image_shape()
    );

    // Five tasks of two classes each, in natural label order.
    let stream = make_task_stream(&dataset, 5, None)?;
    println!("\nsequential split into {} tasks:", stream.n_tasks());
    for task in &stream.tasks {
        println!(
            "  task {}: classes {:?}, {} train / {} test examples",
            task.task_id,
            task.class_ids,
            task.train_subset.len(),
            task.test_subset.len()
        );
    }

    // The same dataset under a seeded class-order shuffle: class groups
    // change, sizes don't. A different seed gives a different curriculum.
    let shuffled = make_task_stream(&dataset, 5, Some(42))?;
    println!("\nwith class order shuffled (seed 42):");
    for task in &shuffled.tasks {
        println!("  task {}: classes {:?}", task.task_id, task.class_ids);
    }

    // When the class count does not divide evenly, the first task absorbs
    // the remainder so later tasks stay uniform.
    let uneven = make_task_stream(&dataset, 3, None)?;
    println!("\n10 classes over 3 tasks (first task absorbs the remainder):");
    for task in &uneven.tasks {
        println!("  task {}: classes {:?}", task.task_id, task.class_ids);
    }

    // Joint training is the stream collapsed to a single task; it serves as
    // the accuracy ceiling the incremental learners are compared against.
    let joint = stream.collapsed();
    println!(
        "\ncollapsed (joint) stream: {} task with classes {:?}",
        joint.n_tasks(),
        joint.tasks[0].class_ids
    );
    Ok(())
}
