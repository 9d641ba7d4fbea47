//! Comparing learned representations with linear CKA.
//!
//! Centered kernel alignment scores two feature matrices extracted from the
//! same examples on a 0..1 scale. It is invariant to orthogonal rotation
//! and isotropic scaling of either feature space, which makes it the right
//! tool for comparing networks that never shared a coordinate system.
//!
//! Run with: cargo run --example cka_similarity

use adrm::data::{make_task_stream, synthetic_dataset};
use adrm::eval::{cka_matrix, eval_subset, extract_features, linear_cka};
use adrm::model::ArchitectureId;
use adrm::rng::SeedBlock;
use adrm::train::{run_stream, NullObserver, TrainConfig, TrainMode};
use adrm::Result;
use ndarray::Array2;
use rand::Rng;

fn main() -> Result<()> {
    let dataset = synthetic_dataset(16, 200, 100, 4, 0.1, 7)?;
    let stream = make_task_stream(&dataset, 1, None)?;

    // Three models: two differ only in init seed, one trains on a label
    // shuffle of the same images (so it must carve the space differently).
    let mut models = Vec::new();
    for (name, master) in [("seed-3", 3u64), ("seed-4", 4)] {
        let mut config = TrainConfig::reference(TrainMode::Finetune, ArchitectureId::SmallCnn, master);
        config.batch_size = 64;
        config.epochs_first = 6;
        println!("training {name}...");
        let model = run_stream(&dataset, &stream, &config, &mut NullObserver)?.model;
        models.push((name.to_string(), model));
    }

    // Every model sees the same seeded subset, in the same order — CKA
    // compares representations row by row.
    let (images, labels) = eval_subset(&dataset.test, 200, 99)?;
    let features: Vec<_> = models
        .iter()
        .map(|(name, model)| extract_features(model, name, &images, &labels))
        .collect::<Result<_>>()?;

    let matrix = cka_matrix(&features)?;
    println!("\npairwise cka:");
    for (i, id) in matrix.model_ids.iter().enumerate() {
        let row: Vec<String> = (0..matrix.model_ids.len())
            .map(|j| format!("{:.4}", matrix.scores[[i, j]]))
            .collect();
        println!("  {id:>7}: [{}]", row.join(", "));
    }
    println!("same-architecture twins land well above chance: they learned the same problem");

    // Invariances, checked directly on the raw scores.
    let x = &features[0].features;
    let y = &features[1].features;
    let self_score = linear_cka(x, x)?;
    let scaled: Array2<f64> = y * 3.7;
    println!("\ncka(x, x)        = {self_score:.6} (identity)");
    println!("cka(x, 3.7 * y)  = {:.6} (scale invariant)", linear_cka(x, &scaled)?);
    println!("cka(x, y)        = {:.6}", linear_cka(x, y)?);

    // Independent Gaussian features score near zero: CKA's floor.
    let mut rng = SeedBlock::stream(5);
    let noise_a: Array2<f64> =
        Array2::from_shape_fn((x.shape()[0], 32), |_| rng.gen_range(-1.0..1.0));
    let noise_b: Array2<f64> =
        Array2::from_shape_fn((x.shape()[0], 32), |_| rng.gen_range(-1.0..1.0));
    println!(
        "cka(noise, noise') = {:.6} (unrelated features score near zero)",
        linear_cka(&noise_a, &noise_b)?
    );
    Ok(())
}
