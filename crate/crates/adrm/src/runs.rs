//! Run directories: layout, manifest, checkpoints, and locking.
//!
//! One run directory holds everything a run produced:
//!
//! ```text
//! <run>/
//!   config.toml            normalized config snapshot, written before training
//!   manifest.json          digests, phase statuses, artifact checksums
//!   accuracy_matrix.csv    lower-triangular R, rewritten after every task
//!   metrics.csv            one row per optimizer step
//!   diversifier.csv        one row per step that ran the diversifier
//!   checkpoints/task_K.ckpt
//!   eval/                  robustness sweep tables (written by eval)
//!   analysis/              CKA matrix + feature exports (written by analyze)
//! ```
//!
//! Re-running with the same config reproduces every artifact byte for byte;
//! the manifest's checksums make that checkable after the fact.

use crate::eval::AccuracyMatrix;
use crate::memory::{BufferPolicy, MemoryBuffer};
use crate::model::{ArchitectureId, Model};
use crate::rng::SeedBlock;
use crate::train::{RunObserver, RunSnapshot, RunStreamState, RunStreams, TaskLog};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "ADRM_OUT_ROOT";

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MATRIX_FILE: &str = "accuracy_matrix.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DIVERSIFIER_FILE: &str = "diversifier.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const EVAL_DIR: &str = "eval";
pub const ANALYSIS_DIR: &str = "analysis";
const LOCK_FILE: &str = ".lock";

/// Output root: `$ADRM_OUT_ROOT` if set, else `./runs`.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Creates `<root>/<name>`, appending `-2`, `-3`, ... if taken. Creation is
/// atomic, so concurrent allocations cannot collide.
pub fn allocate_run_dir(root: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(root)?;
    for i in 1..10_000u32 {
        let candidate = if i == 1 {
            root.join(name)
        } else {
            root.join(format!("{name}-{i}"))
        };
        match std::fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(Error::invalid_argument(format!(
        "could not allocate a run directory for `{name}` under {}",
        root.display()
    )))
}

/// Exclusive advisory lock on a run directory, released on drop. A stale
/// lock (crashed process) must be removed by hand; the error says where.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        if !run_dir.is_dir() {
            return Err(Error::ArtifactNotFound(run_dir.display().to_string()));
        }
        let path = run_dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "pid {}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(path.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseStatus {
    Pending,
    Running,
    Complete,
    Failed,
}

/// `manifest.json`: the run's identity and integrity record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub framework_version: String,
    pub schema_version: u32,
    /// sha256 of the config snapshot bytes.
    pub config_digest: String,
    pub created_at: String,
    pub completed_at: Option<String>,
    pub status: RunStatus,
    pub phases: BTreeMap<String, PhaseStatus>,
    /// Relative artifact path -> sha256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    /// True when the run aborted and the artifacts cover only a prefix of
    /// the stream.
    pub partial: bool,
    pub error: Option<String>,
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

impl Manifest {
    pub fn new(config_digest: String) -> Self {
        let mut phases = BTreeMap::new();
        phases.insert("train".to_string(), PhaseStatus::Pending);
        phases.insert("eval".to_string(), PhaseStatus::Pending);
        phases.insert("analyze".to_string(), PhaseStatus::Pending);
        Manifest {
            framework_version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: crate::config::SCHEMA_VERSION,
            config_digest,
            created_at: now_rfc3339(),
            completed_at: None,
            status: RunStatus::Running,
            phases,
            artifacts: BTreeMap::new(),
            partial: false,
            error: None,
        }
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::NumericFailure(e.to_string()))?;
        std::fs::write(run_dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|_| Error::ArtifactNotFound(path.display().to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::BadArtifact {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Hash an artifact and record it under its run-relative path.
    pub fn record_artifact(&mut self, run_dir: &Path, rel: &str) -> Result<()> {
        let digest = sha256_file(&run_dir.join(rel))?;
        self.artifacts.insert(rel.to_string(), digest);
        Ok(())
    }

    pub fn set_phase(&mut self, phase: &str, status: PhaseStatus) {
        self.phases.insert(phase.to_string(), status);
    }

    pub fn mark_complete(&mut self) {
        self.status = RunStatus::Complete;
        self.completed_at = Some(now_rfc3339());
    }

    pub fn mark_failed(&mut self, error: &Error) {
        self.status = RunStatus::Failed;
        self.partial = true;
        self.error = Some(error.to_string());
        self.completed_at = Some(now_rfc3339());
    }

    /// Re-hash every recorded artifact; errors name the first mismatch.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for (rel, want) in &self.artifacts {
            let path = run_dir.join(rel);
            if !path.is_file() {
                return Err(Error::ArtifactNotFound(path.display().to_string()));
            }
            let got = sha256_file(&path)?;
            if &got != want {
                return Err(Error::BadArtifact {
                    path: path.display().to_string(),
                    message: format!("checksum mismatch: manifest {want}, file {got}"),
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Container magic: "ADRMCKP1". Layout: magic, u32 LE header length, JSON
/// header, then a raw little-endian f64 payload holding all parameters in
/// order followed by the buffer's pixels.
const CKPT_MAGIC: &[u8; 8] = b"ADRMCKP1";

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    shape: Vec<usize>,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct BufferHeader {
    budget: usize,
    policy: BufferPolicy,
    image_shape: Option<[usize; 3]>,
    labels: Vec<usize>,
    task_ids: Vec<usize>,
    seen: u64,
    next_seq: u64,
    pixels_len: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    architecture: ArchitectureId,
    input_shape: (usize, usize, usize),
    class_cols: Vec<usize>,
    task_index: usize,
    global_step: u64,
    params: Vec<ParamEntry>,
    buffer: BufferHeader,
    streams: RunStreamState,
    matrix_rows: Vec<Vec<f64>>,
}

/// Everything needed to resume or evaluate a run at a task boundary.
pub struct Checkpoint {
    pub model: Model,
    pub buffer: MemoryBuffer,
    pub streams: RunStreamState,
    pub matrix: AccuracyMatrix,
    pub task_index: usize,
    pub global_step: u64,
}

pub fn write_checkpoint(
    path: &Path,
    model: &Model,
    buffer: &MemoryBuffer,
    streams: &RunStreams,
    matrix: &AccuracyMatrix,
    task_index: usize,
    global_step: u64,
) -> Result<()> {
    let params = model.params();
    let entries: Vec<ParamEntry> = params
        .iter()
        .map(|p| ParamEntry {
            shape: p.shape().to_vec(),
            len: p.len(),
        })
        .collect();
    let (pixels, image_shape, labels, task_ids, seen, next_seq) = buffer.snapshot();
    let header = CheckpointHeader {
        architecture: model.architecture,
        input_shape: model.input_shape,
        class_cols: model.class_cols().to_vec(),
        task_index,
        global_step,
        params: entries,
        buffer: BufferHeader {
            budget: buffer.budget(),
            policy: buffer.policy(),
            image_shape,
            labels,
            task_ids,
            seen,
            next_seq,
            pixels_len: pixels.len(),
        },
        streams: streams.capture(),
        matrix_rows: matrix.rows().to_vec(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::NumericFailure(e.to_string()))?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CKPT_MAGIC)?;
    f.write_all(&(header_json.len() as u32).to_le_bytes())?;
    f.write_all(&header_json)?;
    for p in &params {
        for v in p.iter() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    for v in &pixels {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bad = |message: String| Error::BadArtifact {
        path: path.display().to_string(),
        message,
    };
    let bytes = std::fs::read(path)
        .map_err(|_| Error::ArtifactNotFound(path.display().to_string()))?;
    if bytes.len() < 12 || &bytes[..8] != CKPT_MAGIC {
        return Err(bad("not a checkpoint container".to_string()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload_at = 12 + header_len;
    if bytes.len() < payload_at {
        return Err(bad("truncated header".to_string()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..payload_at])
        .map_err(|e| bad(format!("header: {e}")))?;

    let n_param: usize = header.params.iter().map(|p| p.len).sum();
    let expected = payload_at + 8 * (n_param + header.buffer.pixels_len);
    if bytes.len() != expected {
        return Err(bad(format!(
            "payload is {} bytes, expected {}",
            bytes.len() - payload_at,
            expected - payload_at
        )));
    }
    let mut values = Vec::with_capacity(n_param + header.buffer.pixels_len);
    for chunk in bytes[payload_at..].chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }

    // Rebuild the model skeleton, then overwrite every parameter.
    let mut dummy = SeedBlock::stream(0);
    let mut model = Model::init(
        header.architecture,
        header.input_shape,
        &header.class_cols,
        &mut dummy,
    )?;
    {
        let mut params = model.params_mut();
        if params.len() != header.params.len() {
            return Err(bad(format!(
                "{} parameter arrays in header, model has {}",
                header.params.len(),
                params.len()
            )));
        }
        let mut cursor = 0usize;
        for (p, entry) in params.iter_mut().zip(&header.params) {
            if p.shape() != entry.shape.as_slice() {
                return Err(bad(format!(
                    "parameter shape {:?} does not match header {:?}",
                    p.shape(),
                    entry.shape
                )));
            }
            for (slot, v) in p.iter_mut().zip(&values[cursor..cursor + entry.len]) {
                *slot = *v;
            }
            cursor += entry.len;
        }
    }

    let pixels = &values[n_param..];
    let buffer = MemoryBuffer::restore(
        header.buffer.budget,
        header.buffer.policy,
        pixels,
        header.buffer.image_shape,
        &header.buffer.labels,
        &header.buffer.task_ids,
        header.buffer.seen,
        header.buffer.next_seq,
    )?;
    let matrix = AccuracyMatrix::from_rows(header.matrix_rows)
        .map_err(|e| bad(format!("accuracy matrix: {e}")))?;

    Ok(Checkpoint {
        model,
        buffer,
        streams: header.streams,
        matrix,
        task_index: header.task_index,
        global_step: header.global_step,
    })
}

/// Path of the checkpoint written after task `k`.
pub fn checkpoint_path(run_dir: &Path, task_index: usize) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("task_{task_index}.ckpt"))
}

/// The final checkpoint of a completed run (the one with the largest task
/// index).
pub fn final_checkpoint_path(run_dir: &Path) -> Result<PathBuf> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    let mut best: Option<(usize, PathBuf)> = None;
    let entries = std::fs::read_dir(&dir)
        .map_err(|_| Error::ArtifactNotFound(dir.display().to_string()))?;
    for entry in entries {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(k) = name
            .strip_prefix("task_")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            if best.as_ref().map(|(b, _)| k > *b).unwrap_or(true) {
                best = Some((k, path));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| Error::ArtifactNotFound(format!("{}/task_*.ckpt", dir.display())))
}

// ---------------------------------------------------------------------------
// Step logs as CSV
// ---------------------------------------------------------------------------

pub const METRICS_HEADER: &str =
    "task_id,epoch,step_in_epoch,global_step,lr,current_task_loss,rehearsal_loss,total_loss,rehearsal_batch";
pub const DIVERSIFIER_HEADER: &str =
    "task_id,epoch,step_in_epoch,global_step,n_fooled,n_resisted,mean_epsilon,fooling_rate";

pub fn write_metrics_csv(logs: &[TaskLog], path: &Path) -> Result<()> {
    let mut out = format!("{METRICS_HEADER}\n");
    for log in logs {
        for s in &log.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                s.task_id,
                s.epoch,
                s.step_in_epoch,
                s.global_step,
                s.lr,
                s.loss.current_task_loss,
                s.loss.rehearsal_loss,
                s.loss.total,
                s.rehearsal_batch
            ));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_diversifier_csv(logs: &[TaskLog], path: &Path) -> Result<()> {
    let mut out = format!("{DIVERSIFIER_HEADER}\n");
    for log in logs {
        for s in &log.steps {
            if let Some(d) = &s.diversifier {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    s.task_id,
                    s.epoch,
                    s.step_in_epoch,
                    s.global_step,
                    d.n_fooled,
                    d.n_resisted,
                    d.mean_epsilon,
                    d.fooling_rate
                ));
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// The persisting observer
// ---------------------------------------------------------------------------

/// Observer that materializes a run directory while `run_stream` trains:
/// after every task it rewrites the (partial) accuracy matrix and step logs
/// and drops a checkpoint, so a failed run leaves a usable prefix behind.
pub struct PersistObserver {
    run_dir: PathBuf,
    manifest: Manifest,
}

impl PersistObserver {
    pub fn new(run_dir: PathBuf, manifest: Manifest) -> Self {
        PersistObserver { run_dir, manifest }
    }

    fn write_artifacts(&mut self, snap: &RunSnapshot<'_>) -> Result<()> {
        std::fs::create_dir_all(self.run_dir.join(CHECKPOINT_DIR))?;
        snap.matrix.write_csv(&self.run_dir.join(MATRIX_FILE))?;
        write_metrics_csv(snap.task_logs, &self.run_dir.join(METRICS_FILE))?;
        write_diversifier_csv(snap.task_logs, &self.run_dir.join(DIVERSIFIER_FILE))?;
        write_checkpoint(
            &checkpoint_path(&self.run_dir, snap.task_index),
            snap.model,
            snap.buffer,
            snap.streams,
            snap.matrix,
            snap.task_index,
            snap.global_step,
        )?;
        Ok(())
    }

    fn record_all(&mut self) -> Result<()> {
        for rel in [CONFIG_FILE, MATRIX_FILE, METRICS_FILE, DIVERSIFIER_FILE] {
            if self.run_dir.join(rel).is_file() {
                let dir = self.run_dir.clone();
                self.manifest.record_artifact(&dir, rel)?;
            }
        }
        let ckpt_dir = self.run_dir.join(CHECKPOINT_DIR);
        if ckpt_dir.is_dir() {
            let mut names: Vec<String> = std::fs::read_dir(&ckpt_dir)?
                .filter_map(|e| e.ok())
                .filter_map(|e| e.file_name().into_string().ok())
                .collect();
            names.sort();
            for name in names {
                let rel = format!("{CHECKPOINT_DIR}/{name}");
                let dir = self.run_dir.clone();
                self.manifest.record_artifact(&dir, &rel)?;
            }
        }
        Ok(())
    }

    /// Called by the train command once `run_stream` returns successfully.
    pub fn finalize(mut self) -> Result<Manifest> {
        self.manifest.set_phase("train", PhaseStatus::Complete);
        self.manifest.mark_complete();
        self.record_all()?;
        self.manifest.save(&self.run_dir)?;
        Ok(self.manifest)
    }
}

impl RunObserver for PersistObserver {
    fn task_finished(&mut self, snap: &RunSnapshot<'_>) -> Result<()> {
        self.write_artifacts(snap)?;
        self.manifest.set_phase("train", PhaseStatus::Running);
        self.manifest.save(&self.run_dir)
    }

    fn run_failed(&mut self, snap: &RunSnapshot<'_>, error: &Error) {
        // Persist whatever the run produced; never mask the original error.
        let _ = self.write_artifacts(snap);
        self.manifest.set_phase("train", PhaseStatus::Failed);
        self.manifest.mark_failed(error);
        let _ = self.record_all();
        let _ = self.manifest.save(&self.run_dir);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedBlock;
    use ndarray::Array3;
    use rand::Rng;

    #[test]
    fn checkpoint_roundtrips_model_buffer_streams_and_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task_1.ckpt");

        let mut rng = SeedBlock::stream(42);
        let mut model = Model::init(
            ArchitectureId::SmallCnn,
            (3, 8, 8),
            &[0, 1, 2],
            &mut rng,
        )
        .unwrap();
        model.expand_head(&[7, 5], &mut rng).unwrap();

        let mut buffer = MemoryBuffer::new(10, BufferPolicy::Reservoir).unwrap();
        for i in 0..6 {
            let img = Array3::from_shape_fn((3, 8, 8), |_| rng.gen_range(0.0..1.0));
            buffer.offer(img, i % 3, 0, &mut rng).unwrap();
        }

        let seeds = SeedBlock::from_master(9);
        let mut streams = RunStreams::new(&seeds);
        let _: u64 = streams.data.gen();
        let _: f64 = streams.diversify.gen();

        let matrix =
            AccuracyMatrix::from_rows(vec![vec![0.9], vec![0.5, 0.8]]).unwrap();

        write_checkpoint(&path, &model, &buffer, &streams, &matrix, 1, 260).unwrap();
        let ck = read_checkpoint(&path).unwrap();

        assert_eq!(ck.task_index, 1);
        assert_eq!(ck.global_step, 260);
        assert_eq!(ck.matrix, matrix);
        assert_eq!(ck.model.class_cols(), model.class_cols());
        for (a, b) in ck.model.params().iter().zip(model.params()) {
            assert_eq!(a, b, "parameters must restore bit-exactly");
        }
        assert_eq!(ck.buffer.len(), buffer.len());
        assert_eq!(ck.buffer.class_counts(), buffer.class_counts());

        // Restored streams continue exactly where the originals were.
        let mut restored = RunStreams::restore(&ck.streams).unwrap();
        assert_eq!(streams.data.gen::<u64>(), restored.data.gen::<u64>());
        assert_eq!(streams.memory.gen::<u64>(), restored.memory.gen::<u64>());

        // Same forward output, bit for bit.
        let images = ndarray::Array4::from_shape_fn((2, 3, 8, 8), |_| 0.3);
        let a = model.forward(&images).unwrap();
        let b = ck.model.forward(&images).unwrap();
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");

        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(Error::BadArtifact { .. })
        ));

        // Valid container, truncated payload.
        let mut rng = SeedBlock::stream(1);
        let model = Model::init(ArchitectureId::Linear, (1, 2, 2), &[0], &mut rng).unwrap();
        let buffer = MemoryBuffer::new(4, BufferPolicy::Reservoir).unwrap();
        let streams = RunStreams::new(&SeedBlock::from_master(1));
        let matrix = AccuracyMatrix::new();
        write_checkpoint(&path, &model, &buffer, &streams, &matrix, 0, 0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(Error::BadArtifact { .. })
        ));

        assert!(matches!(
            read_checkpoint(&dir.path().join("absent.ckpt")),
            Err(Error::ArtifactNotFound(_))
        ));
    }

    #[test]
    fn lock_is_exclusive_and_released_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let guard = LockGuard::acquire(dir.path()).unwrap();
        assert!(matches!(
            LockGuard::acquire(dir.path()),
            Err(Error::Locked(_))
        ));
        drop(guard);
        let again = LockGuard::acquire(dir.path()).unwrap();
        drop(again);
    }

    #[test]
    fn manifest_verify_catches_tampering() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x,y\n1,2\n").unwrap();
        let mut m = Manifest::new(sha256_hex(b"config"));
        m.record_artifact(dir.path(), "a.csv").unwrap();
        m.save(dir.path()).unwrap();

        let loaded = Manifest::load(dir.path()).unwrap();
        loaded.verify(dir.path()).unwrap();

        std::fs::write(dir.path().join("a.csv"), "x,y\n1,3\n").unwrap();
        assert!(matches!(
            loaded.verify(dir.path()),
            Err(Error::BadArtifact { .. })
        ));

        std::fs::remove_file(dir.path().join("a.csv")).unwrap();
        assert!(matches!(
            loaded.verify(dir.path()),
            Err(Error::ArtifactNotFound(_))
        ));
    }

    #[test]
    fn run_dir_allocation_never_collides() {
        let dir = tempfile::tempdir().unwrap();
        let a = allocate_run_dir(dir.path(), "exp").unwrap();
        let b = allocate_run_dir(dir.path(), "exp").unwrap();
        let c = allocate_run_dir(dir.path(), "exp").unwrap();
        assert_eq!(a.file_name().unwrap(), "exp");
        assert_eq!(b.file_name().unwrap(), "exp-2");
        assert_eq!(c.file_name().unwrap(), "exp-3");
        assert!(a.is_dir() && b.is_dir() && c.is_dir());
    }

    #[test]
    fn final_checkpoint_picks_the_largest_task_index() {
        let dir = tempfile::tempdir().unwrap();
        let ckpts = dir.path().join(CHECKPOINT_DIR);
        std::fs::create_dir_all(&ckpts).unwrap();
        for k in [0usize, 2, 10] {
            std::fs::write(ckpts.join(format!("task_{k}.ckpt")), b"x").unwrap();
        }
        let best = final_checkpoint_path(dir.path()).unwrap();
        assert_eq!(best.file_name().unwrap(), "task_10.ckpt");
    }
}
