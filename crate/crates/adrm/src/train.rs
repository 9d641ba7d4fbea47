//! The class-incremental training loop.
//!
//! Each optimizer step minimizes an unweighted two-term objective: the mean
//! cross-entropy of the current-task mini-batch plus, in rehearsal modes,
//! the mean cross-entropy of a memory batch of the same size. ADRM passes
//! that memory batch through the diversifier before scoring it. Training is
//! strictly sequential and deterministic; only the per-task evaluation fans
//! out in parallel, against a frozen model.

use crate::data::{augment_batch, AugmentConfig, Dataset, Task, TaskStream};
use crate::diversify::{diversify, mix_rehearsal, DiversificationSpec};
use crate::eval::{accuracy, AccuracyMatrix};
use crate::memory::{BufferPolicy, MemoryBuffer};
use crate::model::{ArchitectureId, Model};
use crate::rng::{SeedBlock, Stream, StreamState};
use crate::{Error, Result};
use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How a run handles past-task data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Sequential training with no memory: the forgetting floor.
    Finetune,
    /// All tasks collapsed into one: the accuracy ceiling.
    Joint,
    /// Experience replay of raw memory samples.
    Er,
    /// Replay with adversarially diversified memory samples appended.
    Adrm,
}

impl TrainMode {
    /// Whether the mode reads and writes the rehearsal buffer.
    pub fn uses_memory(self) -> bool {
        matches!(self, TrainMode::Er | TrainMode::Adrm)
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TrainMode::Finetune => "finetune",
            TrainMode::Joint => "joint",
            TrainMode::Er => "er",
            TrainMode::Adrm => "adrm",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finetune" => Ok(TrainMode::Finetune),
            "joint" => Ok(TrainMode::Joint),
            "er" => Ok(TrainMode::Er),
            "adrm" => Ok(TrainMode::Adrm),
            other => Err(Error::invalid_argument(format!(
                "unknown train mode `{other}` (expected finetune|joint|er|adrm)"
            ))),
        }
    }
}

/// When task examples are offered to the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OfferTiming {
    /// Offer every training example once, after the task finishes.
    PostTask,
    /// Offer each mini-batch's examples right after its optimizer step,
    /// for reservoir parity with streaming replay.
    PerStep,
}

/// Full recipe for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub architecture: ArchitectureId,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Multiplier applied at each milestone.
    pub lr_decay: f64,
    /// Fractions of the task's epoch budget; a milestone fires at epoch
    /// `floor(fraction * epochs)` (never at epoch 0).
    pub lr_milestones: Vec<f64>,
    pub epochs_first: usize,
    pub epochs_rest: usize,
    pub memory_budget: usize,
    pub buffer_policy: BufferPolicy,
    pub offer_timing: OfferTiming,
    /// Rehearsal diversification; only consulted in adrm mode.
    pub diversification: DiversificationSpec,
    pub augment: AugmentConfig,
    pub seeds: SeedBlock,
}

impl TrainConfig {
    /// Reference hyperparameters: SGD at lr 0.01 / momentum 0.9, decay 0.1
    /// at 50% and 75% of each task's budget, batch 256, 200 epochs on the
    /// first task and 128 after, memory budget 1024.
    pub fn reference(mode: TrainMode, architecture: ArchitectureId, master_seed: u64) -> Self {
        TrainConfig {
            mode,
            architecture,
            batch_size: 256,
            lr: 0.01,
            momentum: 0.9,
            lr_decay: 0.1,
            lr_milestones: vec![0.5, 0.75],
            epochs_first: 200,
            epochs_rest: 128,
            memory_budget: 1024,
            buffer_policy: BufferPolicy::Reservoir,
            offer_timing: OfferTiming::PostTask,
            diversification: DiversificationSpec::default(),
            augment: AugmentConfig::default(),
            seeds: SeedBlock::from_master(master_seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::invalid_argument("batch_size must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid_argument("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid_argument("momentum must lie in [0, 1)"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid_argument("lr_decay must lie in (0, 1]"));
        }
        if self.lr_milestones.iter().any(|m| !(0.0 < *m && *m < 1.0)) {
            return Err(Error::invalid_argument(
                "lr milestones must be fractions in (0, 1)",
            ));
        }
        if self.epochs_first < 1 || self.epochs_rest < 1 {
            return Err(Error::invalid_argument("epoch budgets must be >= 1"));
        }
        if self.memory_budget < 1 {
            return Err(Error::invalid_argument("memory_budget must be >= 1"));
        }
        self.diversification.validate()?;
        self.augment.validate()?;
        Ok(())
    }

    fn epochs_for(&self, run_task_index: usize) -> usize {
        if run_task_index == 0 {
            self.epochs_first
        } else {
            self.epochs_rest
        }
    }
}

/// Learning rate at a given epoch of a task: the base rate times one decay
/// factor per milestone passed. Milestones that floor to epoch 0 never fire,
/// so very short tasks keep the base rate.
pub fn lr_at(lr: f64, decay: f64, milestones: &[f64], epochs: usize, epoch: usize) -> f64 {
    let passed = milestones
        .iter()
        .map(|frac| (frac * epochs as f64).floor() as usize)
        .filter(|&m| m >= 1 && epoch >= m)
        .count();
    lr * decay.powi(passed as i32)
}

/// The two Eq.-1 terms of one step, equally weighted.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepLossBreakdown {
    pub current_task_loss: f64,
    pub rehearsal_loss: f64,
    pub total: f64,
}

/// Diversifier diagnostics for one rehearsal batch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiversifierStats {
    pub n_fooled: usize,
    pub n_resisted: usize,
    pub mean_epsilon: f64,
    /// `n_fooled / rehearsal batch size`.
    pub fooling_rate: f64,
}

/// One optimizer step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub task_id: usize,
    pub epoch: usize,
    pub step_in_epoch: usize,
    pub global_step: u64,
    pub lr: f64,
    pub loss: StepLossBreakdown,
    /// Size of the rehearsal batch actually scored (after mixing); 0 when
    /// the step had no rehearsal term.
    pub rehearsal_batch: usize,
    pub diversifier: Option<DiversifierStats>,
}

/// Everything recorded while training one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskLog {
    pub task_id: usize,
    pub class_ids: Vec<usize>,
    pub epochs: usize,
    pub steps: Vec<StepRecord>,
    pub buffer_len_after: usize,
}

impl TaskLog {
    /// Mean total loss of one epoch's steps.
    pub fn epoch_mean_total(&self, epoch: usize) -> Option<f64> {
        let (sum, n) = self
            .steps
            .iter()
            .filter(|s| s.epoch == epoch)
            .fold((0.0, 0usize), |(s, n), r| (s + r.loss.total, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Mean fooling rate over all steps that ran the diversifier.
    pub fn mean_fooling_rate(&self) -> Option<f64> {
        let (sum, n) = self
            .steps
            .iter()
            .filter_map(|s| s.diversifier.as_ref())
            .fold((0.0, 0usize), |(s, n), d| (s + d.fooling_rate, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// The live named RNG streams of one run.
pub struct RunStreams {
    pub data: Stream,
    pub init: Stream,
    pub memory: Stream,
    pub diversify: Stream,
    pub eval: Stream,
}

impl RunStreams {
    pub fn new(seeds: &SeedBlock) -> Self {
        RunStreams {
            data: SeedBlock::stream(seeds.data),
            init: SeedBlock::stream(seeds.init),
            memory: SeedBlock::stream(seeds.memory),
            diversify: SeedBlock::stream(seeds.diversify),
            eval: SeedBlock::stream(seeds.eval),
        }
    }

    pub fn capture(&self) -> RunStreamState {
        RunStreamState {
            data: StreamState::capture(&self.data),
            init: StreamState::capture(&self.init),
            memory: StreamState::capture(&self.memory),
            diversify: StreamState::capture(&self.diversify),
            eval: StreamState::capture(&self.eval),
        }
    }

    pub fn restore(state: &RunStreamState) -> Result<Self> {
        Ok(RunStreams {
            data: state.data.restore()?,
            init: state.init.restore()?,
            memory: state.memory.restore()?,
            diversify: state.diversify.restore()?,
            eval: state.eval.restore()?,
        })
    }
}

/// Serializable positions of all run streams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStreamState {
    pub data: StreamState,
    pub init: StreamState,
    pub memory: StreamState,
    pub diversify: StreamState,
    pub eval: StreamState,
}

/// SGD with classical momentum: `v <- mu v + g`, `theta <- theta - lr v`.
/// Velocity starts at zero and is rebuilt per task, both because a task
/// boundary is a distribution shift and because head expansion changes the
/// parameter shapes.
pub struct Sgd {
    momentum: f64,
    velocity: Vec<ArrayD<f64>>,
}

impl Sgd {
    pub fn fresh(model: &Model, momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: model
                .params()
                .iter()
                .map(|p| ArrayD::zeros(p.raw_dim()))
                .collect(),
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[ArrayD<f64>], lr: f64) -> Result<()> {
        let mu = self.momentum;
        let mut params = model.params_mut();
        if params.len() != grads.len() || grads.len() != self.velocity.len() {
            return Err(Error::invalid_argument(
                "gradient/parameter list length mismatch",
            ));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            if p.shape() != g.shape() {
                return Err(Error::invalid_argument("gradient shape mismatch"));
            }
            v.zip_mut_with(g, |vv, gg| *vv = mu * *vv + gg);
            p.zip_mut_with(v, |pp, vv| *pp -= lr * *vv);
        }
        Ok(())
    }
}

/// Trains one task in place and returns its log.
///
/// The model's head is expanded for the task's classes first (drawing from
/// the init stream only if the classes are new). Every epoch reshuffles the
/// task's examples from the data stream and draws one augmentation seed per
/// batch; er/adrm steps add a rehearsal term whenever the buffer is
/// non-empty, and adrm routes the memory batch through the diversifier when
/// the mix ratio is positive. A non-finite loss aborts with the offending
/// step index.
#[allow(clippy::too_many_arguments)]
pub fn train_task(
    model: &mut Model,
    buffer: &mut MemoryBuffer,
    dataset: &Dataset,
    task: &Task,
    config: &TrainConfig,
    streams: &mut RunStreams,
    epochs: usize,
    global_step: &mut u64,
) -> Result<TaskLog> {
    config.validate()?;
    if task.train_subset.is_empty() {
        return Err(Error::invalid_argument(format!(
            "task {} has no training examples",
            task.task_id
        )));
    }
    if epochs < 1 {
        return Err(Error::invalid_argument("epochs must be >= 1"));
    }
    // Pre: a task's classes must be new to the buffer.
    let counts = buffer.class_counts();
    if let Some(c) = task.class_ids.iter().find(|c| counts.contains_key(c)) {
        return Err(Error::invalid_argument(format!(
            "class {c} of task {} already has buffer entries",
            task.task_id
        )));
    }

    model.expand_head(&task.class_ids, &mut streams.init)?;

    let n = task.train_subset.len();
    let bs = config.batch_size;
    let n_batches = n.div_ceil(bs);
    let mut opt = Sgd::fresh(model, config.momentum);
    let mut steps = Vec::with_capacity(epochs * n_batches);
    let rehearse = config.mode.uses_memory();

    for epoch in 0..epochs {
        let lr = lr_at(config.lr, config.lr_decay, &config.lr_milestones, epochs, epoch);
        let mut order = task.train_subset.clone();
        order.shuffle(&mut streams.data);

        for step in 0..n_batches {
            let lo = step * bs;
            let hi = (lo + bs).min(n);
            let (raw_images, labels) = dataset.train.gather(&order[lo..hi]);
            // One augmentation seed per batch, drawn unconditionally so the
            // data stream's layout does not depend on the augment config.
            let aug_seed = streams.data.gen::<u64>();
            let images = augment_batch(&raw_images, &config.augment, aug_seed)?;

            let fail = |e: Error, at: u64| match e {
                Error::NumericFailure(message) => Error::TrainingFailure { step: at, message },
                other => other,
            };
            let at = *global_step;

            let current = model
                .loss_and_grads(&images, &labels)
                .map_err(|e| fail(e, at))?;

            let mut rehearsal_loss = 0.0;
            let mut rehearsal_batch = 0usize;
            let mut diversifier = None;
            let mut grads = current
                .param_grads
                .expect("loss_and_grads always returns parameter gradients");

            if rehearse && !buffer.is_empty() {
                let mb = buffer.sample(bs, &mut streams.memory)?;
                let (rimg, rlab) = if config.mode == TrainMode::Adrm
                    && config.diversification.ratio > 0.0
                {
                    let div = diversify(
                        model,
                        model,
                        &mb.images,
                        &mb.labels,
                        &config.diversification,
                        &mut streams.diversify,
                    )
                    .map_err(|e| fail(e, at))?;
                    diversifier = Some(DiversifierStats {
                        n_fooled: div.n_fooled(),
                        n_resisted: div.n_resisted(),
                        mean_epsilon: div.mean_epsilon(),
                        fooling_rate: div.fooling_rate(),
                    });
                    mix_rehearsal(
                        &mb.images,
                        &mb.labels,
                        &div,
                        config.diversification.ratio,
                        &mut streams.diversify,
                    )?
                } else {
                    (mb.images, mb.labels)
                };
                let reh = model
                    .loss_and_grads(&rimg, &rlab)
                    .map_err(|e| fail(e, at))?;
                rehearsal_loss = reh.loss;
                rehearsal_batch = rlab.len();
                let rg = reh
                    .param_grads
                    .expect("loss_and_grads always returns parameter gradients");
                for (g, r) in grads.iter_mut().zip(rg) {
                    *g += &r;
                }
            }

            let total = current.loss + rehearsal_loss;
            if !total.is_finite() {
                return Err(Error::TrainingFailure {
                    step: at,
                    message: format!("non-finite loss {total}"),
                });
            }

            opt.step(model, &grads, lr)?;

            if rehearse && config.offer_timing == OfferTiming::PerStep {
                buffer.offer_all(&raw_images, &labels, task.task_id, &mut streams.memory)?;
            }

            steps.push(StepRecord {
                task_id: task.task_id,
                epoch,
                step_in_epoch: step,
                global_step: at,
                lr,
                loss: StepLossBreakdown {
                    current_task_loss: current.loss,
                    rehearsal_loss,
                    total,
                },
                rehearsal_batch,
                diversifier,
            });
            *global_step += 1;
        }
    }

    if rehearse && config.offer_timing == OfferTiming::PostTask {
        let (imgs, labs) = dataset.train.gather(&task.train_subset);
        buffer.offer_all(&imgs, &labs, task.task_id, &mut streams.memory)?;
    }

    Ok(TaskLog {
        task_id: task.task_id,
        class_ids: task.class_ids.clone(),
        epochs,
        steps,
        buffer_len_after: buffer.len(),
    })
}

/// Read-only view of a run's state handed to observers.
pub struct RunSnapshot<'a> {
    /// Index of the task just finished (or being trained, on failure).
    pub task_index: usize,
    pub n_tasks: usize,
    pub model: &'a Model,
    pub buffer: &'a MemoryBuffer,
    pub matrix: &'a AccuracyMatrix,
    /// Logs of all completed tasks, including the current one when called
    /// from `task_finished`.
    pub task_logs: &'a [TaskLog],
    pub streams: &'a RunStreams,
    pub global_step: u64,
}

/// Callbacks for persistence. `run_stream` drives training either way; an
/// observer only watches.
pub trait RunObserver {
    /// After each task's training and evaluation row.
    fn task_finished(&mut self, snap: &RunSnapshot<'_>) -> Result<()> {
        let _ = snap;
        Ok(())
    }

    /// Once, right before `run_stream` returns an error: everything
    /// completed so far, so partial artifacts can be written. Must not fail
    /// the run further, hence no Result.
    fn run_failed(&mut self, snap: &RunSnapshot<'_>, error: &Error) {
        let _ = (snap, error);
    }
}

/// Observer that does nothing.
pub struct NullObserver;

impl RunObserver for NullObserver {}

/// A finished run.
#[derive(Debug)]
pub struct RunResult {
    pub model: Model,
    pub matrix: AccuracyMatrix,
    pub task_logs: Vec<TaskLog>,
    pub buffer: MemoryBuffer,
}

impl RunResult {
    pub fn aca(&self) -> Result<f64> {
        self.matrix.aca()
    }
}

/// Trains the whole stream in order and fills the accuracy matrix row by
/// row: after task `t`, row `t` holds the accuracy on the test subset of
/// every task `i <= t`. Joint mode first collapses the stream into a single
/// task. Training failures reach the observer (with all partial state)
/// before they propagate.
pub fn run_stream(
    dataset: &Dataset,
    stream: &TaskStream,
    config: &TrainConfig,
    observer: &mut dyn RunObserver,
) -> Result<RunResult> {
    config.validate()?;
    dataset.validate()?;
    if stream.n_tasks() == 0 {
        return Err(Error::invalid_argument("empty task stream"));
    }
    let effective = if config.mode == TrainMode::Joint {
        stream.collapsed()
    } else {
        stream.clone()
    };

    let mut streams = RunStreams::new(&config.seeds);
    let mut model = Model::init(
        config.architecture,
        dataset.image_shape(),
        &effective.tasks[0].class_ids,
        &mut streams.init,
    )?;
    let mut buffer = MemoryBuffer::new(config.memory_budget, config.buffer_policy)?;
    let mut matrix = AccuracyMatrix::new();
    let mut task_logs: Vec<TaskLog> = Vec::new();
    let mut global_step = 0u64;

    for (ti, task) in effective.tasks.iter().enumerate() {
        let epochs = config.epochs_for(ti);
        let outcome = train_task(
            &mut model,
            &mut buffer,
            dataset,
            task,
            config,
            &mut streams,
            epochs,
            &mut global_step,
        )
        .and_then(|log| {
            task_logs.push(log);
            // Row t: accuracy on every seen task, in parallel against the
            // frozen model.
            let row: Vec<f64> = effective.tasks[..=ti]
                .par_iter()
                .map(|prev| {
                    let (imgs, labs) = dataset.test.gather(&prev.test_subset);
                    accuracy(&model, &imgs, &labs)
                })
                .collect::<Result<_>>()?;
            matrix.push_row(row)
        });

        let snap = RunSnapshot {
            task_index: ti,
            n_tasks: effective.tasks.len(),
            model: &model,
            buffer: &buffer,
            matrix: &matrix,
            task_logs: &task_logs,
            streams: &streams,
            global_step,
        };
        match outcome {
            Ok(()) => observer.task_finished(&snap)?,
            Err(e) => {
                observer.run_failed(&snap, &e);
                return Err(e);
            }
        }
    }

    Ok(RunResult {
        model,
        matrix,
        task_logs,
        buffer,
    })
}
