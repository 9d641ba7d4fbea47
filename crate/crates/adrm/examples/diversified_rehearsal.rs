//! The core ADRM move: adversarially diversifying a rehearsal batch.
//!
//! Each memory sample gets its own FGSM perturbation with a radius drawn
//! from U(1/255, 16/255), then the current model judges the result: samples
//! it now misclassifies land in the *fooled* subset (these cross a decision
//! boundary), the rest in *resisted*. A slice of each subset — `ratio` of
//! the batch size, fooled first — is appended to the clean rehearsal batch,
//! so the learner rehearses both the memory and its own failure modes.
//!
//! Run with: cargo run --example diversified_rehearsal

use adrm::data::{make_task_stream, synthetic_dataset};
use adrm::diversify::{diversify, mix_rehearsal, DiversificationSpec};
use adrm::model::ArchitectureId;
use adrm::rng::SeedBlock;
use adrm::train::{run_stream, NullObserver, TrainConfig, TrainMode};
use adrm::Result;

fn main() -> Result<()> {
    // Train on the first two tasks so the model is competent on what the
    // buffer holds — diversification is only interesting against a model
    // that gets the clean samples right.
    let dataset = synthetic_dataset(16, 400, 100, 10, 0.12, 77)?;
    let stream = make_task_stream(&dataset, 5, None)?;

    let mut config = TrainConfig::reference(TrainMode::Er, ArchitectureId::SmallCnn, 5);
    config.batch_size = 64;
    config.epochs_first = 6;
    config.epochs_rest = 4;
    config.memory_budget = 200;

    let two_tasks = adrm::data::TaskStream {
        tasks: stream.tasks[..2].to_vec(),
        split_spec: stream.split_spec.clone(),
    };
    println!("training er on tasks 0-1...");
    let run = run_stream(&dataset, &two_tasks, &config, &mut NullObserver)?;
    let (model, buffer) = (run.model, run.buffer);
    println!("buffer holds {} samples\n", buffer.len());

    // Pull one rehearsal batch and diversify it.
    let mut memory_rng = SeedBlock::stream(21);
    let mut div_rng = SeedBlock::stream(22);
    let batch = buffer.sample(64, &mut memory_rng)?;

    let spec = DiversificationSpec::with_ratio(0.5);
    let diversified = diversify(
        &model,
        &model,
        &batch.images,
        &batch.labels,
        &spec,
        &mut div_rng,
    )?;
    println!(
        "diversified {} rehearsal samples: {} fooled / {} resisted (fooling rate {:.2})",
        batch.labels.len(),
        diversified.n_fooled(),
        diversified.n_resisted(),
        diversified.fooling_rate()
    );
    println!(
        "per-sample radii: mean {:.4}, range [{:.4}, {:.4}] (drawn from [{:.4}, {:.4}])",
        diversified.mean_epsilon(),
        diversified.epsilons.iter().copied().fold(f64::INFINITY, f64::min),
        diversified.epsilons.iter().copied().fold(0.0, f64::max),
        spec.epsilon_low,
        spec.epsilon_high
    );

    // The mix step at different ratios. floor(ratio * 64) from each subset,
    // capped by what the partition actually produced.
    println!("\n{:>6}  {:>11}  {:>13}  {:>10}", "ratio", "quota/side", "appended", "batch size");
    for ratio in [0.0, 0.1, 0.25, 0.5, 1.0] {
        let mut mix_rng = SeedBlock::stream(33);
        let (mixed, labels) = mix_rehearsal(
            &batch.images,
            &batch.labels,
            &diversified,
            ratio,
            &mut mix_rng,
        )?;
        let quota = (ratio * 64.0).floor() as usize;
        let appended = labels.len() - batch.labels.len();
        println!(
            "{ratio:>6.2}  {quota:>11}  {appended:>13}  {:>10}",
            mixed.shape()[0]
        );
    }

    println!(
        "\nat ratio 0 the batch passes through untouched — ADRM with r = 0 \
         is exactly experience replay"
    );
    Ok(())
}
