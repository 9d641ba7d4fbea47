//! The corruption benchmark: ten perturbation families, six severities.
//!
//! Corruptions are *test-time* distribution shifts (noise, blur, weather,
//! digital artifacts) — no gradients involved, unlike the attacks. Severity
//! 0 is the identity by contract; distortion grows monotonically from there.
//!
//! Run with: cargo run --example corruptions

use adrm::data::{corrupt, synthetic_dataset, CorruptionSpec, ALL_CORRUPTION_KINDS};
use adrm::eval::{accuracy, corruption_sweep};
use adrm::model::ArchitectureId;
use adrm::train::{run_stream, NullObserver, TrainConfig, TrainMode};
use adrm::Result;

fn main() -> Result<()> {
    let dataset = synthetic_dataset(16, 200, 100, 4, 0.1, 7)?;

    // Distortion ladder: mean per-image L2 distance from the clean input,
    // per kind and severity. Severity 0 must print as exactly zero.
    println!("mean L2 distortion per severity");
    println!(
        "{:>18}  {}",
        "kind",
        (0..=5).map(|s| format!("{s:>7}")).collect::<String>()
    );
    let images = &dataset.test.images;
    let n = images.shape()[0] as f64;
    for kind in ALL_CORRUPTION_KINDS {
        let mut row = String::new();
        for severity in 0..=5u8 {
            let spec = CorruptionSpec::new(kind, severity)?;
            let corrupted = corrupt(images, &spec, 11)?;
            let l2 = images
                .iter()
                .zip(corrupted.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / n.sqrt();
            row.push_str(&format!("{l2:>7.3}"));
        }
        println!("{:>18}  {row}", kind.to_string());
    }

    // Now the part that matters: what corruption does to a trained model.
    let stream = adrm::data::make_task_stream(&dataset, 1, None)?;
    let mut config = TrainConfig::reference(TrainMode::Finetune, ArchitectureId::SmallCnn, 3);
    config.batch_size = 64;
    config.epochs_first = 6;
    println!("\ntraining a small cnn on clean data...");
    let model = run_stream(&dataset, &stream, &config, &mut NullObserver)?.model;
    println!(
        "clean accuracy: {:.3}",
        accuracy(&model, images, &dataset.test.labels)?
    );

    let cells = corruption_sweep(
        &model,
        "demo",
        images,
        &dataset.test.labels,
        &ALL_CORRUPTION_KINDS,
        &[0, 1, 3, 5],
        42,
    )?;
    println!("\naccuracy under corruption");
    println!("{:>18}  {:>5}  {:>5}  {:>5}  {:>5}", "kind", "s0", "s1", "s3", "s5");
    for chunk in cells.chunks(4) {
        println!(
            "{:>18}  {:>5.3}  {:>5.3}  {:>5.3}  {:>5.3}",
            chunk[0].kind.to_string(),
            chunk[0].accuracy,
            chunk[1].accuracy,
            chunk[2].accuracy,
            chunk[3].accuracy
        );
    }
    Ok(())
}
