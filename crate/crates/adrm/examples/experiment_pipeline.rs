//! The whole pipeline through the library API: train, evaluate, analyze.
//!
//! This is exactly what the `adrm` binary does, minus the argument parsing:
//! presets resolve to a config, `run_experiment` materializes a run
//! directory (config snapshot, manifest, checkpoints, CSV logs), and the
//! eval/analyze commands append robustness tables and a CKA matrix to it.
//!
//! Run with: cargo run --example experiment_pipeline

use adrm::cli::{cmd_analyze, cmd_check_artifacts, cmd_eval, run_experiment, EvalOverrides};
use adrm::config::preset;
use adrm::Result;

fn main() -> Result<()> {
    let root = std::env::temp_dir().join("adrm-pipeline-demo");

    // Shrink the desk preset so the demo finishes in seconds: 3 tasks over
    // 6 classes, a linear probe instead of the cnn.
    let mut config = preset("desk-er")?;
    config.name = "pipeline-demo".to_string();
    if let adrm::config::DatasetSpec::Synthetic {
        resolution,
        train_per_class,
        test_per_class,
        n_classes,
        ..
    } = &mut config.dataset
    {
        *resolution = 8;
        *train_per_class = 40;
        *test_per_class = 20;
        *n_classes = 6;
    }
    config.stream.n_steps = 3;
    config.train.architecture = adrm::model::ArchitectureId::Linear;
    config.train.epochs_first = 4;
    config.train.epochs_rest = 3;
    config.train.memory_budget = 60;
    config.eval.severities = vec![0, 2, 4];
    config.eval.epsilons = vec![0.0, 4.0 / 255.0, 8.0 / 255.0];
    config.eval.subset = 60;

    println!("training into {}...", root.display());
    let (run_dir, outcome) = run_experiment(&config, Some(&root), true)?;
    println!(
        "run {} complete, final average accuracy {:.3}\n",
        run_dir.display(),
        outcome.result.aca()?
    );

    let eval = cmd_eval(&run_dir, &EvalOverrides::default())?;
    println!(
        "eval wrote {} corruption rows and {} adversarial rows",
        eval.corruption.len(),
        eval.adversarial.len()
    );
    for cell in eval.adversarial.iter().filter(|c| c.attack == adrm::attack::AttackKind::Fgsm) {
        println!("  fgsm eps {:.4}: accuracy {:.3}", cell.epsilon, cell.accuracy);
    }

    // Self-comparison: the 1x1 CKA matrix is exactly [[1.0]].
    let analysis = cmd_analyze(&[run_dir.clone(), run_dir.clone()], None)?;
    println!(
        "\nanalyze: {}x{} cka matrix written to {}",
        analysis.matrix.model_ids.len(),
        analysis.matrix.model_ids.len(),
        analysis.csv.display()
    );

    println!("\nartifact check:");
    for line in cmd_check_artifacts(&run_dir)? {
        println!("  {line}");
    }

    println!("\nrun directory contents:");
    let mut paths: Vec<_> = walk(&run_dir);
    paths.sort();
    for p in paths {
        println!("  {}", p.strip_prefix(&run_dir).unwrap_or(&p).display());
    }

    // Leave no state behind; rerunning the demo allocates a fresh suffix
    // otherwise.
    std::fs::remove_dir_all(&root)?;
    Ok(())
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = std::fs::read_dir(dir) {
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                out.extend(walk(&path));
            } else {
                out.push(path);
            }
        }
    }
    out
}
