//! Catastrophic forgetting, and what rehearsal does about it.
//!
//! Runs the same 5-task stream through four learners and prints their
//! accuracy matrices side by side:
//!
//!   finetune  — sequential training, no memory: the forgetting floor
//!   er        — experience replay from a 200-slot reservoir
//!   adrm      — replay plus adversarially diversified rehearsal (r = 0.25)
//!   joint     — all tasks at once: the accuracy ceiling
//!
//! Row t of a matrix is measured after training task t; column i is the
//! accuracy on task i's test split. Forgetting is visible as a column
//! fading out below its diagonal entry.
//!
//! Run with: cargo run --example train_continual

use adrm::data::{make_task_stream, synthetic_dataset};
use adrm::eval::AccuracyMatrix;
use adrm::model::ArchitectureId;
use adrm::train::{run_stream, NullObserver, TrainConfig, TrainMode};
use adrm::Result;

fn main() -> Result<()> {
    let dataset = synthetic_dataset(16, 400, 100, 10, 0.12, 77)?;
    let stream = make_task_stream(&dataset, 5, None)?;

    let mut results: Vec<(TrainMode, AccuracyMatrix)> = Vec::new();
    for mode in [
        TrainMode::Finetune,
        TrainMode::Er,
        TrainMode::Adrm,
        TrainMode::Joint,
    ] {
        let mut config = TrainConfig::reference(mode, ArchitectureId::SmallCnn, 1);
        config.batch_size = 64;
        config.epochs_first = 10;
        config.epochs_rest = 5;
        config.memory_budget = 200;
        config.diversification.ratio = 0.25;
        config.augment.flip_p = 0.0; // the grating classes are mirror pairs

        println!("training {mode}...");
        let run = run_stream(&dataset, &stream, &config, &mut NullObserver)?;
        results.push((mode, run.matrix));
    }

    for (mode, matrix) in &results {
        println!("\n=== {mode} ===");
        println!("        task0  task1  task2  task3  task4");
        for (t, row) in matrix.rows().iter().enumerate() {
            let cells: String = row.iter().map(|a| format!("{a:>7.3}")).collect();
            println!("after {t}{cells}");
        }
        println!("final average class accuracy: {:.3}", matrix.aca()?);
    }

    println!("\nexpected ordering: joint > adrm ~ er >> finetune");
    Ok(())
}
