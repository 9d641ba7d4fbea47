//! White-box attacks: FGSM and PGD against a trained classifier.
//!
//! Trains a small model on clean synthetic data, then perturbs the test set
//! inside epsilon-balls of growing radius and watches accuracy collapse.
//! Also checks the two contracts every attack here obeys: perturbations stay
//! inside the ball, and pixels stay inside [0, 1].
//!
//! Run with: cargo run --example attacks

use adrm::attack::{perturb, AttackSpec};
use adrm::data::{make_task_stream, synthetic_dataset};
use adrm::eval::accuracy;
use adrm::model::ArchitectureId;
use adrm::rng::SeedBlock;
use adrm::train::{run_stream, NullObserver, TrainConfig, TrainMode};
use adrm::Result;

fn main() -> Result<()> {
    let dataset = synthetic_dataset(16, 200, 100, 4, 0.1, 7)?;
    let stream = make_task_stream(&dataset, 1, None)?;

    let mut config = TrainConfig::reference(TrainMode::Finetune, ArchitectureId::Mlp, 3);
    config.batch_size = 64;
    config.lr = 0.05;
    config.epochs_first = 8;

    println!("training a 4-class mlp on clean data...");
    let run = run_stream(&dataset, &stream, &config, &mut NullObserver)?;
    let model = run.model;

    let images = &dataset.test.images;
    let labels = &dataset.test.labels;
    println!("clean accuracy: {:.3}\n", accuracy(&model, images, labels)?);

    // Accuracy under attack, per radius. Radii are in pixel units: 8/255 is
    // a perturbation invisible at arm's length.
    println!("{:>8}  {:>6}  {:>8}  {:>7}", "epsilon", "fgsm", "pgd-linf", "pgd-l2");
    let mut rng = SeedBlock::stream(99);
    for k in [0u32, 2, 4, 8, 16] {
        let eps = k as f64 / 255.0;
        let mut row = Vec::new();
        for spec in [
            AttackSpec::fgsm(eps),
            AttackSpec::pgd_linf(eps),
            // L2 balls live on a different scale: the same per-pixel budget
            // spread over the whole image.
            AttackSpec::pgd_l2(eps * (images.len() as f64 / images.shape()[0] as f64).sqrt()),
        ] {
            let adv = perturb(&model, images, labels, &spec, &mut rng)?;
            row.push(accuracy(&model, &adv, labels)?);

            // Contract checks: ball containment and pixel box.
            let max_delta = adv
                .iter()
                .zip(images.iter())
                .map(|(a, x)| (a - x).abs())
                .fold(0.0f64, f64::max);
            assert!(adv.iter().all(|v| (0.0..=1.0).contains(v)));
            if spec.kind != adrm::attack::AttackKind::PgdL2 {
                assert!(max_delta <= eps + 1e-9, "left the ball: {max_delta} > {eps}");
            }
        }
        println!(
            "  {k:>2}/255  {:>6.3}  {:>8.3}  {:>7.3}",
            row[0], row[1], row[2]
        );
    }

    // Single-step PGD with step size epsilon IS the fast gradient sign
    // method — same formula, bit for bit.
    let eps = 4.0 / 255.0;
    let one_step = AttackSpec {
        steps: 1,
        step_size: eps,
        random_start: false,
        ..AttackSpec::pgd_linf(eps)
    };
    let a = perturb(&model, images, labels, &AttackSpec::fgsm(eps), &mut rng)?;
    let b = perturb(&model, images, labels, &one_step, &mut rng)?;
    println!(
        "\npgd-linf(steps=1, step=eps) == fgsm, bit for bit: {}",
        a == b
    );
    Ok(())
}
