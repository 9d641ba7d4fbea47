//! The subcommands behind the `adrm` binary, implemented as plain library
//! functions so integration tests can drive the whole pipeline in-process.
//! `main.rs` only parses arguments and forwards here.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::attack::AttackKind;
use crate::config::{preset_description, EvalSpec, ExperimentConfig, PRESET_NAMES};
use crate::data::CorruptionKind;
use crate::error::{Error, Result};
use crate::eval::{
    adversarial_sweep, cka_matrix, corruption_sweep, eval_subset, extract_features,
    write_adversarial_csv, write_corruption_csv, AccuracyMatrix, AdversarialCell, CorruptionCell,
    FeatureMatrix, SimilarityMatrix, ADVERSARIAL_HEADER, CORRUPTION_HEADER,
};
use crate::npy::write_npy;
use crate::runs::{
    allocate_run_dir, default_out_root, final_checkpoint_path, read_checkpoint, sha256_hex,
    LockGuard, Manifest, PersistObserver, PhaseStatus, RunStatus, ANALYSIS_DIR, CONFIG_FILE,
    DIVERSIFIER_FILE, DIVERSIFIER_HEADER, EVAL_DIR, MATRIX_FILE, METRICS_FILE, METRICS_HEADER,
};
use crate::train::{run_stream, RunObserver, RunResult, RunSnapshot};

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Validates and normalizes a config, allocates a fresh run directory under
/// `out_root` (flag > config > env/default), and snapshots the normalized
/// config into it before any training happens. The manifest starts in
/// `running` state with every phase pending.
pub fn prepare_run(config: &ExperimentConfig, out_root: Option<&Path>) -> Result<PathBuf> {
    let mut config = config.clone();
    config.validate()?;
    config.normalize();
    let root = out_root
        .map(Path::to_path_buf)
        .or_else(|| config.output_root.as_ref().map(PathBuf::from))
        .unwrap_or_else(default_out_root);
    let run_dir = allocate_run_dir(&root, &config.name)?;
    let snapshot = config.to_toml()?;
    std::fs::write(run_dir.join(CONFIG_FILE), &snapshot)?;
    let mut manifest = Manifest::new(sha256_hex(snapshot.as_bytes()));
    manifest.record_artifact(&run_dir, CONFIG_FILE)?;
    manifest.save(&run_dir)?;
    Ok(run_dir)
}

/// What `cmd_train` hands back: the final manifest plus the in-memory run
/// result (model, matrix, logs, buffer).
#[derive(Debug)]
pub struct TrainOutcome {
    pub manifest: Manifest,
    pub result: RunResult,
}

/// Forwards persistence to [`PersistObserver`] and optionally narrates task
/// boundaries on stderr.
struct Progress {
    inner: PersistObserver,
    verbose: bool,
}

impl RunObserver for Progress {
    fn task_finished(&mut self, snap: &RunSnapshot<'_>) -> Result<()> {
        if self.verbose {
            let row = snap
                .matrix
                .rows()
                .last()
                .map(|r| {
                    r.iter()
                        .map(|a| format!("{a:.3}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .unwrap_or_default();
            eprintln!(
                "task {}/{}: acc [{row}] buffer {}",
                snap.task_index + 1,
                snap.n_tasks,
                snap.buffer.len()
            );
        }
        self.inner.task_finished(snap)
    }

    fn run_failed(&mut self, snap: &RunSnapshot<'_>, error: &Error) {
        self.inner.run_failed(snap, error);
    }
}

/// Trains the exact config snapshotted in `run_dir`. Re-reading the snapshot
/// (rather than trusting the caller's copy) guarantees the artifacts always
/// match the recorded digest. Failures leave partial artifacts and a failed
/// manifest behind; the original error propagates.
pub fn cmd_train(run_dir: &Path, verbose: bool) -> Result<TrainOutcome> {
    let _lock = LockGuard::acquire(run_dir)?;
    let manifest = Manifest::load(run_dir)?;
    if manifest.status == RunStatus::Complete {
        return Err(Error::invalid_argument(format!(
            "{} is already complete; start a new run directory",
            run_dir.display()
        )));
    }
    let snapshot_path = run_dir.join(CONFIG_FILE);
    let snapshot = std::fs::read_to_string(&snapshot_path)
        .map_err(|_| Error::ArtifactNotFound(snapshot_path.display().to_string()))?;
    if sha256_hex(snapshot.as_bytes()) != manifest.config_digest {
        return Err(Error::BadArtifact {
            path: snapshot_path.display().to_string(),
            message: "config snapshot does not match the manifest digest".to_string(),
        });
    }
    let config = ExperimentConfig::parse(&snapshot, &snapshot_path.display().to_string())?;
    config.validate()?;

    let dataset = config.dataset.load()?;
    let stream = config.stream.build(&dataset, &config.seed_block())?;
    let train_config = config.train_config();

    let mut observer = Progress {
        inner: PersistObserver::new(run_dir.to_path_buf(), manifest),
        verbose,
    };
    let result = run_stream(&dataset, &stream, &train_config, &mut observer)?;
    let manifest = observer.inner.finalize()?;
    Ok(TrainOutcome { manifest, result })
}

/// `prepare_run` + `cmd_train` in one call; returns the run directory with
/// the outcome.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_root: Option<&Path>,
    verbose: bool,
) -> Result<(PathBuf, TrainOutcome)> {
    let run_dir = prepare_run(config, out_root)?;
    let outcome = cmd_train(&run_dir, verbose)?;
    Ok((run_dir, outcome))
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Field-wise overrides applied on top of the run's `[eval]` section. An
/// empty list deliberately skips that sweep.
#[derive(Debug, Default, Clone)]
pub struct EvalOverrides {
    pub kinds: Option<Vec<CorruptionKind>>,
    pub severities: Option<Vec<u8>>,
    pub attacks: Option<Vec<AttackKind>>,
    pub epsilons: Option<Vec<f64>>,
}

impl EvalOverrides {
    fn apply(&self, mut spec: EvalSpec) -> EvalSpec {
        if let Some(kinds) = &self.kinds {
            spec.corruption_kinds = kinds.clone();
        }
        if let Some(severities) = &self.severities {
            spec.severities = severities.clone();
        }
        if let Some(attacks) = &self.attacks {
            spec.attacks = attacks.clone();
        }
        if let Some(epsilons) = &self.epsilons {
            spec.epsilons = epsilons.clone();
        }
        spec
    }
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub corruption: Vec<CorruptionCell>,
    pub adversarial: Vec<AdversarialCell>,
    /// Written only when the corresponding grid is non-empty.
    pub corruption_csv: Option<PathBuf>,
    pub adversarial_csv: Option<PathBuf>,
}

/// Sweeps the final checkpoint of a completed run over the corruption and
/// adversarial grids from its config (as overridden) and writes
/// `eval/corruption.csv` / `eval/adversarial.csv`. The model id in every row
/// is the run directory's name.
pub fn cmd_eval(run_dir: &Path, overrides: &EvalOverrides) -> Result<EvalOutcome> {
    let _lock = LockGuard::acquire(run_dir)?;
    let mut manifest = Manifest::load(run_dir)?;
    if manifest.status != RunStatus::Complete {
        return Err(Error::invalid_argument(format!(
            "{} has not completed training",
            run_dir.display()
        )));
    }
    let config = ExperimentConfig::load(&run_dir.join(CONFIG_FILE))?;
    let spec = overrides.apply(config.eval.clone());
    spec.validate()?;

    let checkpoint = read_checkpoint(&final_checkpoint_path(run_dir)?)?;
    let model_id = run_dir_id(run_dir);
    let dataset = config.dataset.load()?;
    let test = &dataset.test;
    let seed = config.seed_block().eval;

    manifest.set_phase("eval", PhaseStatus::Running);
    manifest.save(run_dir)?;
    let fail = |manifest: &mut Manifest, e: Error| -> Error {
        manifest.set_phase("eval", PhaseStatus::Failed);
        let _ = manifest.save(run_dir);
        e
    };

    let eval_dir = run_dir.join(EVAL_DIR);
    std::fs::create_dir_all(&eval_dir)?;

    let mut corruption = Vec::new();
    let mut corruption_csv = None;
    if !spec.corruption_kinds.is_empty() && !spec.severities.is_empty() {
        corruption = corruption_sweep(
            &checkpoint.model,
            &model_id,
            &test.images,
            &test.labels,
            &spec.corruption_kinds,
            &spec.severities,
            seed,
        )
        .map_err(|e| fail(&mut manifest, e))?;
        let path = eval_dir.join("corruption.csv");
        write_corruption_csv(&corruption, &path)?;
        manifest.record_artifact(run_dir, &format!("{EVAL_DIR}/corruption.csv"))?;
        corruption_csv = Some(path);
    }

    let mut adversarial = Vec::new();
    let mut adversarial_csv = None;
    if !spec.attacks.is_empty() && !spec.epsilons.is_empty() {
        adversarial = adversarial_sweep(
            &checkpoint.model,
            &model_id,
            &test.images,
            &test.labels,
            &spec.attacks,
            &spec.epsilons,
            seed,
        )
        .map_err(|e| fail(&mut manifest, e))?;
        let path = eval_dir.join("adversarial.csv");
        write_adversarial_csv(&adversarial, &path)?;
        manifest.record_artifact(run_dir, &format!("{EVAL_DIR}/adversarial.csv"))?;
        adversarial_csv = Some(path);
    }

    manifest.set_phase("eval", PhaseStatus::Complete);
    manifest.save(run_dir)?;
    Ok(EvalOutcome {
        corruption,
        adversarial,
        corruption_csv,
        adversarial_csv,
    })
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct AnalyzeOutcome {
    pub matrix: SimilarityMatrix,
    pub csv: PathBuf,
    pub feature_files: Vec<PathBuf>,
}

/// Compares the learned representations of two or more completed runs that
/// share a dataset: extracts penultimate features on one seeded test subset
/// and writes the pairwise CKA matrix plus per-model feature exports into
/// the first run's `analysis/` directory. Passing the same directory twice
/// degenerates to the 1x1 self-comparison.
pub fn cmd_analyze(run_dirs: &[PathBuf], subset_seed: Option<u64>) -> Result<AnalyzeOutcome> {
    if run_dirs.len() < 2 {
        return Err(Error::invalid_argument(
            "analyze needs at least two run directories (repeat one to self-compare)",
        ));
    }
    // Canonicalize so the same run passed twice collapses to one model.
    let mut unique: Vec<PathBuf> = Vec::new();
    let mut seen = BTreeSet::new();
    for dir in run_dirs {
        let canon = dir
            .canonicalize()
            .map_err(|_| Error::ArtifactNotFound(dir.display().to_string()))?;
        if seen.insert(canon.clone()) {
            unique.push(canon);
        }
    }

    let mut configs = Vec::new();
    for dir in &unique {
        let manifest = Manifest::load(dir)?;
        if manifest.status != RunStatus::Complete {
            return Err(Error::invalid_argument(format!(
                "{} has not completed training",
                dir.display()
            )));
        }
        configs.push(ExperimentConfig::load(&dir.join(CONFIG_FILE))?);
    }
    for (dir, config) in unique.iter().zip(&configs) {
        if config.dataset != configs[0].dataset {
            return Err(Error::IncompatibleRuns(format!(
                "{} was trained on a different dataset than {}",
                dir.display(),
                unique[0].display()
            )));
        }
    }

    // One shared subset: every model sees the same examples in the same
    // order, so CKA pairs rows correctly.
    let dataset = configs[0].dataset.load()?;
    let seed = subset_seed.unwrap_or_else(|| configs[0].seed_block().eval);
    let (images, labels) = eval_subset(&dataset.test, configs[0].eval.subset, seed)?;

    let ids = model_ids(&unique);
    let mut features: Vec<FeatureMatrix> = Vec::new();
    for (dir, id) in unique.iter().zip(&ids) {
        let checkpoint = read_checkpoint(&final_checkpoint_path(dir)?)?;
        features.push(extract_features(&checkpoint.model, id, &images, &labels)?);
    }
    let matrix = cka_matrix(&features)?;

    let home = &unique[0];
    let _lock = LockGuard::acquire(home)?;
    let mut manifest = Manifest::load(home)?;
    let analysis_dir = home.join(ANALYSIS_DIR);
    std::fs::create_dir_all(&analysis_dir)?;

    let csv = analysis_dir.join("cka.csv");
    matrix.write_csv(&csv)?;
    manifest.record_artifact(home, &format!("{ANALYSIS_DIR}/cka.csv"))?;

    let mut feature_files = Vec::new();
    for f in &features {
        let stem = format!("features_{}", f.model_id);
        let npy = analysis_dir.join(format!("{stem}.npy"));
        let data: Vec<f64> = f.features.iter().copied().collect();
        write_npy(&npy, &[f.n(), f.dim()], &data)?;
        let sidecar = serde_json::json!({
            "model_id": f.model_id,
            "layer_id": f.layer_id,
            "subset_seed": seed,
            "n": f.n(),
            "dim": f.dim(),
            "labels": f.labels,
        });
        let json = analysis_dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_string_pretty(&sidecar).unwrap())?;
        manifest.record_artifact(home, &format!("{ANALYSIS_DIR}/{stem}.npy"))?;
        manifest.record_artifact(home, &format!("{ANALYSIS_DIR}/{stem}.json"))?;
        feature_files.push(npy);
    }

    manifest.set_phase("analyze", PhaseStatus::Complete);
    manifest.save(home)?;
    Ok(AnalyzeOutcome {
        matrix,
        csv,
        feature_files,
    })
}

fn run_dir_id(dir: &Path) -> String {
    dir.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("run")
        .to_string()
}

/// Directory basenames, disambiguated when two different paths share one.
fn model_ids(dirs: &[PathBuf]) -> Vec<String> {
    let mut ids: Vec<String> = dirs.iter().map(|d| run_dir_id(d)).collect();
    for i in 0..ids.len() {
        let mut n = 1;
        for j in 0..i {
            if ids[j] == ids[i] || ids[j].starts_with(&format!("{}-", ids[i])) {
                n += 1;
            }
        }
        if n > 1 {
            ids[i] = format!("{}-{n}", ids[i]);
        }
    }
    ids
}

// ---------------------------------------------------------------------------
// validate-config / list-presets
// ---------------------------------------------------------------------------

/// Validates a config and returns its normalized snapshot (all defaults and
/// seeds materialized) — what `train` would write into the run directory.
pub fn cmd_validate_config(config: &ExperimentConfig) -> Result<String> {
    let mut config = config.clone();
    config.validate()?;
    config.normalize();
    config.to_toml()
}

pub fn cmd_list_presets() -> String {
    let width = PRESET_NAMES.iter().map(|n| n.len()).max().unwrap_or(0);
    PRESET_NAMES
        .iter()
        .map(|name| format!("{name:width$}  {}", preset_description(name)))
        .collect::<Vec<_>>()
        .join("\n")
}

// ---------------------------------------------------------------------------
// check-artifacts
// ---------------------------------------------------------------------------

/// Re-hashes every artifact the manifest records and checks each CSV whose
/// schema this crate documents. Returns one report line per check.
pub fn cmd_check_artifacts(run_dir: &Path) -> Result<Vec<String>> {
    let manifest = Manifest::load(run_dir)?;
    manifest.verify(run_dir)?;
    let mut report = vec![format!(
        "checksums ok ({} artifacts)",
        manifest.artifacts.len()
    )];

    let mut check_header = |rel: &str, want: &str| -> Result<()> {
        let path = run_dir.join(rel);
        if !path.is_file() {
            return Ok(());
        }
        let text = std::fs::read_to_string(&path)?;
        let got = text.lines().next().unwrap_or("");
        if got != want {
            return Err(Error::BadArtifact {
                path: path.display().to_string(),
                message: format!("header `{got}`, expected `{want}`"),
            });
        }
        report.push(format!("schema ok: {rel}"));
        Ok(())
    };
    check_header(METRICS_FILE, METRICS_HEADER)?;
    check_header(DIVERSIFIER_FILE, DIVERSIFIER_HEADER)?;
    check_header(&format!("{EVAL_DIR}/corruption.csv"), CORRUPTION_HEADER)?;
    check_header(&format!("{EVAL_DIR}/adversarial.csv"), ADVERSARIAL_HEADER)?;

    let matrix_path = run_dir.join(MATRIX_FILE);
    if matrix_path.is_file() {
        // Full parse: header, triangular shape, and [0,1] range.
        AccuracyMatrix::read_csv(&matrix_path)?;
        report.push(format!("schema ok: {MATRIX_FILE}"));
    }
    let cka_path = run_dir.join(ANALYSIS_DIR).join("cka.csv");
    if cka_path.is_file() {
        let text = std::fs::read_to_string(&cka_path)?;
        let first = text.lines().next().unwrap_or("");
        if !first.starts_with("model_id,") {
            return Err(Error::BadArtifact {
                path: cka_path.display().to_string(),
                message: format!("header `{first}`, expected `model_id,<ids...>`"),
            });
        }
        report.push(format!("schema ok: {ANALYSIS_DIR}/cka.csv"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    /// A preset shrunk until a full train run takes seconds: 3 tasks over 6
    /// classes, tiny splits, linear probe.
    fn tiny_config(name: &str, mode: &str) -> ExperimentConfig {
        let text = format!(
            r#"
schema_version = 1
name = "{name}"

[dataset]
kind = "synthetic"
resolution = 8
train_per_class = 24
test_per_class = 12
n_classes = 6
noise = 0.1
seed = 5

[stream]
n_steps = 3

[train]
mode = "{mode}"
architecture = "linear"
batch_size = 16
lr = 0.2
epochs_first = 2
epochs_rest = 2
memory_budget = 60

[train.augment]
flip_p = 0.0
crop_pad = 0
brightness = [0.0, 0.0]
contrast = [1.0, 1.0]

[seeds]
master = 11

[eval]
corruption_kinds = ["gaussian-noise", "fog"]
severities = [0, 2]
attacks = ["fgsm"]
epsilons = [0.0, 0.0157]
subset = 40
"#
        );
        ExperimentConfig::parse(&text, "tiny").unwrap()
    }

    #[test]
    fn train_eval_analyze_roundtrip_on_a_tiny_run() {
        let root = tempfile::tempdir().unwrap();
        let (dir, outcome) =
            run_experiment(&tiny_config("tiny-er", "er"), Some(root.path()), false).unwrap();

        assert_eq!(outcome.manifest.status, RunStatus::Complete);
        assert_eq!(outcome.result.matrix.n_tasks(), 3);
        assert!(dir.join(CONFIG_FILE).is_file());
        assert!(dir.join(MATRIX_FILE).is_file());

        let eval = cmd_eval(&dir, &EvalOverrides::default()).unwrap();
        // 2 kinds x 2 severities, 1 attack x 2 epsilons.
        assert_eq!(eval.corruption.len(), 4);
        assert_eq!(eval.adversarial.len(), 2);
        // The zero-severity and zero-epsilon cells both equal clean accuracy.
        let clean = outcome.result.matrix.rows().last().unwrap().clone();
        let mean_clean: f64 = clean.iter().sum::<f64>() / clean.len() as f64;
        // Clean rows in the matrix are per-task; the sweep covers the whole
        // test split, so only compare against the sweep's own epsilon-0 cell.
        let _ = mean_clean;
        assert_eq!(eval.adversarial[0].epsilon, 0.0);
        assert_eq!(eval.corruption[0].severity, 0);
        assert_eq!(eval.corruption[0].accuracy, eval.adversarial[0].accuracy);

        let analysis = cmd_analyze(&[dir.clone(), dir.clone()], None).unwrap();
        assert_eq!(analysis.matrix.model_ids.len(), 1);
        assert!((analysis.matrix.scores[[0, 0]] - 1.0).abs() < 1e-9);

        let report = cmd_check_artifacts(&dir).unwrap();
        assert!(report.iter().any(|l| l.contains("accuracy_matrix.csv")));
        assert!(report.iter().any(|l| l.contains("eval/corruption.csv")));
    }

    #[test]
    fn rerunning_a_complete_run_is_refused() {
        let root = tempfile::tempdir().unwrap();
        let (dir, _) =
            run_experiment(&tiny_config("tiny-er", "er"), Some(root.path()), false).unwrap();
        let err = cmd_train(&dir, false).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn identical_configs_produce_identical_matrices() {
        let root = tempfile::tempdir().unwrap();
        let (a, _) =
            run_experiment(&tiny_config("twin", "adrm"), Some(root.path()), false).unwrap();
        let (b, _) =
            run_experiment(&tiny_config("twin", "adrm"), Some(root.path()), false).unwrap();
        assert_ne!(a, b);
        let bytes_a = std::fs::read(a.join(MATRIX_FILE)).unwrap();
        let bytes_b = std::fs::read(b.join(MATRIX_FILE)).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn analyze_refuses_mismatched_datasets() {
        let root = tempfile::tempdir().unwrap();
        let (a, _) =
            run_experiment(&tiny_config("a", "er"), Some(root.path()), false).unwrap();
        let mut other = tiny_config("b", "er");
        if let crate::config::DatasetSpec::Synthetic { seed, .. } = &mut other.dataset {
            *seed += 1;
        }
        let (b, _) = run_experiment(&other, Some(root.path()), false).unwrap();
        let err = cmd_analyze(&[a, b], None).unwrap_err();
        assert!(matches!(err, Error::IncompatibleRuns(_)));
    }

    #[test]
    fn eval_on_an_unfinished_run_is_refused() {
        let root = tempfile::tempdir().unwrap();
        let dir = prepare_run(&tiny_config("pending", "er"), Some(root.path())).unwrap();
        let err = cmd_eval(&dir, &EvalOverrides::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn preset_names_all_validate() {
        for name in PRESET_NAMES {
            let config = preset(name).unwrap();
            cmd_validate_config(&config).unwrap();
        }
        assert!(cmd_list_presets().contains("desk-adrm-r10"));
    }
}
