//! `adrm` — train, evaluate, and compare continual-learning runs from the
//! command line. All logic lives in `adrm::cli`; this binary only parses
//! arguments, forwards, and maps errors to exit codes (2 for config/usage
//! errors, 1 for everything else).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use adrm::attack::AttackKind;
use adrm::cli::{
    cmd_analyze, cmd_check_artifacts, cmd_eval, cmd_list_presets, cmd_train, cmd_validate_config,
    prepare_run, EvalOverrides,
};
use adrm::config::{preset, ExperimentConfig};
use adrm::data::CorruptionKind;
use adrm::{Error, Result};

#[derive(Parser)]
#[command(
    name = "adrm",
    version,
    about = "Continual learning with adversarially diversified rehearsal memory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the experiment config comes from: a named preset or a TOML file.
#[derive(Args)]
struct ConfigSource {
    /// Named preset (see `list-presets`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Path to a TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override; every unset stream seed rederives from it.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig> {
        let base = match (&self.preset, &self.config) {
            (Some(name), None) => preset(name)?,
            (None, Some(path)) => ExperimentConfig::load(path)?,
            _ => {
                return Err(Error::invalid_argument(
                    "pass exactly one of --preset or --config",
                ))
            }
        };
        Ok(match self.seed {
            Some(master) => base.with_master_seed(master),
            None => base,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a run end to end and persist its artifacts.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        /// Directory that receives the run directory (else config, else
        /// $ADRM_OUT_ROOT, else ./runs).
        #[arg(long)]
        out_root: Option<PathBuf>,
        /// Suppress per-task progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Sweep a completed run over corruption and adversarial grids.
    Eval {
        run_dir: PathBuf,
        /// Corruption kinds (comma-separated; empty skips the sweep).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        kinds: Option<Vec<String>>,
        /// Corruption severities in 0..=5.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        severities: Option<Vec<u8>>,
        /// Attacks: fgsm, pgd-linf, pgd-l2 (empty skips the sweep).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        attacks: Option<Vec<String>>,
        /// Attack radii in pixel units, e.g. 0.0157 for 4/255.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        epsilons: Option<Vec<f64>>,
    },
    /// Compare representations of completed runs with linear CKA.
    Analyze {
        /// Two or more run directories (repeat one to self-compare).
        #[arg(num_args = 2..)]
        run_dirs: Vec<PathBuf>,
        /// Seed for the shared feature subset (defaults to the first run's
        /// eval seed).
        #[arg(long)]
        subset_seed: Option<u64>,
    },
    /// Check a config and print the normalized snapshot `train` would save.
    ValidateConfig {
        #[command(flatten)]
        source: ConfigSource,
    },
    /// List the built-in experiment presets.
    ListPresets,
    /// Re-hash a run's artifacts and check every documented CSV schema.
    CheckArtifacts { run_dir: PathBuf },
}

fn parse_list<T: std::str::FromStr<Err = Error>>(items: &[String]) -> Result<Vec<T>> {
    items.iter().map(|s| s.trim().parse()).collect()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            source,
            out_root,
            quiet,
        } => {
            let config = source.load()?;
            let run_dir = prepare_run(&config, out_root.as_deref())?;
            println!("run directory: {}", run_dir.display());
            let outcome = cmd_train(&run_dir, !quiet)?;
            println!("status: complete");
            println!("final average accuracy: {:.4}", outcome.result.aca()?);
        }
        Command::Eval {
            run_dir,
            kinds,
            severities,
            attacks,
            epsilons,
        } => {
            let overrides = EvalOverrides {
                kinds: kinds
                    .as_deref()
                    .map(parse_list::<CorruptionKind>)
                    .transpose()?,
                severities,
                attacks: attacks.as_deref().map(parse_list::<AttackKind>).transpose()?,
                epsilons,
            };
            let outcome = cmd_eval(&run_dir, &overrides)?;
            if let Some(path) = &outcome.corruption_csv {
                println!("corruption: {} rows -> {}", outcome.corruption.len(), path.display());
            }
            if let Some(path) = &outcome.adversarial_csv {
                println!(
                    "adversarial: {} rows -> {}",
                    outcome.adversarial.len(),
                    path.display()
                );
            }
        }
        Command::Analyze {
            run_dirs,
            subset_seed,
        } => {
            let outcome = cmd_analyze(&run_dirs, subset_seed)?;
            let ids = &outcome.matrix.model_ids;
            for (i, id) in ids.iter().enumerate() {
                let row: Vec<String> = (0..ids.len())
                    .map(|j| format!("{:.4}", outcome.matrix.scores[[i, j]]))
                    .collect();
                println!("{id}: [{}]", row.join(", "));
            }
            println!("cka matrix -> {}", outcome.csv.display());
            for f in &outcome.feature_files {
                println!("features -> {}", f.display());
            }
        }
        Command::ValidateConfig { source } => {
            let normalized = cmd_validate_config(&source.load()?)?;
            print!("{normalized}");
        }
        Command::ListPresets => println!("{}", cmd_list_presets()),
        Command::CheckArtifacts { run_dir } => {
            for line in cmd_check_artifacts(&run_dir)? {
                println!("{line}");
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse().command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
