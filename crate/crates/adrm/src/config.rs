//! Experiment configuration: a versioned, human-editable TOML schema with
//! named presets.
//!
//! A config file fully determines a run. Parsing rejects unknown keys;
//! `normalize` materializes every defaulted seed into the struct, so the
//! snapshot saved into a run directory pins all randomness explicitly.

use crate::attack::AttackKind;
use crate::data::{
    load_cifar10_bin, load_image_dir, make_task_stream, synthetic_dataset, AugmentConfig,
    CorruptionKind, Dataset, TaskStream, ALL_CORRUPTION_KINDS,
};
use crate::diversify::DiversificationSpec;
use crate::memory::BufferPolicy;
use crate::model::ArchitectureId;
use crate::rng::SeedBlock;
use crate::train::{OfferTiming, TrainConfig, TrainMode};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;
const DEFAULT_MASTER_SEED: u64 = 1;

/// Where images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum DatasetSpec {
    /// The procedural grating dataset.
    Synthetic {
        resolution: usize,
        train_per_class: usize,
        test_per_class: usize,
        n_classes: usize,
        noise: f64,
        seed: u64,
    },
    /// A directory of PNGs with a `labels.csv` manifest.
    ImageDir { root: String, name: String },
    /// The CIFAR-10 binary batches.
    Cifar10Bin { root: String },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Synthetic {
                resolution,
                train_per_class,
                test_per_class,
                n_classes,
                noise,
                seed,
            } => synthetic_dataset(
                *resolution,
                *train_per_class,
                *test_per_class,
                *n_classes,
                *noise,
                *seed,
            ),
            DatasetSpec::ImageDir { root, name } => load_image_dir(Path::new(root), name),
            DatasetSpec::Cifar10Bin { root } => load_cifar10_bin(Path::new(root)),
        }
    }
}

/// Class-incremental split parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub n_steps: usize,
    /// Shuffle the class order before splitting; natural label order when
    /// false.
    #[serde(default)]
    pub shuffle_classes: bool,
    /// Explicit shuffle seed; when absent the `class_order` stream seed is
    /// used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_order_seed: Option<u64>,
}

impl StreamSpec {
    /// The shuffle seed actually applied, if any.
    pub fn effective_order_seed(&self, seeds: &SeedBlock) -> Option<u64> {
        if self.shuffle_classes {
            Some(self.class_order_seed.unwrap_or(seeds.class_order))
        } else {
            None
        }
    }

    pub fn build(&self, dataset: &Dataset, seeds: &SeedBlock) -> Result<TaskStream> {
        make_task_stream(dataset, self.n_steps, self.effective_order_seed(seeds))
    }
}

fn d_batch_size() -> usize {
    256
}
fn d_lr() -> f64 {
    0.01
}
fn d_momentum() -> f64 {
    0.9
}
fn d_lr_decay() -> f64 {
    0.1
}
fn d_lr_milestones() -> Vec<f64> {
    vec![0.5, 0.75]
}
fn d_epochs_first() -> usize {
    200
}
fn d_epochs_rest() -> usize {
    128
}
fn d_memory_budget() -> usize {
    1024
}
fn d_buffer_policy() -> BufferPolicy {
    BufferPolicy::Reservoir
}
fn d_offer_timing() -> OfferTiming {
    OfferTiming::PostTask
}

/// The `[train]` table: `TrainConfig` minus the seed block, which lives in
/// the top-level `[seeds]` table. Only `mode` and `architecture` are
/// required; everything else defaults to the reference hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: TrainMode,
    pub architecture: ArchitectureId,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "d_lr_milestones")]
    pub lr_milestones: Vec<f64>,
    #[serde(default = "d_epochs_first")]
    pub epochs_first: usize,
    #[serde(default = "d_epochs_rest")]
    pub epochs_rest: usize,
    #[serde(default = "d_memory_budget")]
    pub memory_budget: usize,
    #[serde(default = "d_buffer_policy")]
    pub buffer_policy: BufferPolicy,
    #[serde(default = "d_offer_timing")]
    pub offer_timing: OfferTiming,
    #[serde(default)]
    pub diversification: DiversificationSpec,
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl TrainSection {
    pub fn to_train_config(&self, seeds: SeedBlock) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            architecture: self.architecture,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            lr_decay: self.lr_decay,
            lr_milestones: self.lr_milestones.clone(),
            epochs_first: self.epochs_first,
            epochs_rest: self.epochs_rest,
            memory_budget: self.memory_budget,
            buffer_policy: self.buffer_policy,
            offer_timing: self.offer_timing,
            diversification: self.diversification,
            augment: self.augment,
            seeds,
        }
    }
}

/// The `[seeds]` table. Before normalization any field may be absent; a
/// missing stream seed is derived from `master` (default 1). After
/// `materialize`, all six stream seeds are explicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversify: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_order: Option<u64>,
}

impl SeedsSpec {
    pub fn materialize(&self) -> SeedBlock {
        let base = SeedBlock::from_master(self.master.unwrap_or(DEFAULT_MASTER_SEED));
        SeedBlock {
            data: self.data.unwrap_or(base.data),
            init: self.init.unwrap_or(base.init),
            memory: self.memory.unwrap_or(base.memory),
            diversify: self.diversify.unwrap_or(base.diversify),
            eval: self.eval.unwrap_or(base.eval),
            class_order: self.class_order.unwrap_or(base.class_order),
        }
    }

    fn from_block(block: SeedBlock) -> Self {
        SeedsSpec {
            master: None,
            data: Some(block.data),
            init: Some(block.init),
            memory: Some(block.memory),
            diversify: Some(block.diversify),
            eval: Some(block.eval),
            class_order: Some(block.class_order),
        }
    }
}

fn d_severities() -> Vec<u8> {
    vec![0, 1, 2, 3, 4, 5]
}
fn d_corruption_kinds() -> Vec<CorruptionKind> {
    ALL_CORRUPTION_KINDS.to_vec()
}
fn d_attacks() -> Vec<AttackKind> {
    vec![AttackKind::Fgsm, AttackKind::PgdLinf, AttackKind::PgdL2]
}
fn d_epsilons() -> Vec<f64> {
    vec![0.0, 2.0 / 255.0, 4.0 / 255.0, 8.0 / 255.0, 16.0 / 255.0]
}
fn d_subset() -> usize {
    2000
}

/// The `[eval]` table: robustness grids and the feature-subset size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    #[serde(default = "d_corruption_kinds")]
    pub corruption_kinds: Vec<CorruptionKind>,
    #[serde(default = "d_severities")]
    pub severities: Vec<u8>,
    #[serde(default = "d_attacks")]
    pub attacks: Vec<AttackKind>,
    #[serde(default = "d_epsilons")]
    pub epsilons: Vec<f64>,
    /// Examples in the shared feature/CKA subset.
    #[serde(default = "d_subset")]
    pub subset: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            corruption_kinds: d_corruption_kinds(),
            severities: d_severities(),
            attacks: d_attacks(),
            epsilons: d_epsilons(),
            subset: d_subset(),
        }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.severities.iter().any(|&s| s > 5) {
            return Err(Error::invalid_argument("severities must lie in 0..=5"));
        }
        if self.epsilons.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::invalid_argument(
                "attack epsilons must be finite and >= 0",
            ));
        }
        if self.subset < 2 {
            return Err(Error::invalid_argument("feature subset needs >= 2 examples"));
        }
        Ok(())
    }
}

/// A full experiment recipe: everything a run directory needs to reproduce
/// itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Run label; becomes part of the default run-directory name.
    pub name: String,
    pub dataset: DatasetSpec,
    pub stream: StreamSpec,
    pub train: TrainSection,
    #[serde(default)]
    pub seeds: SeedsSpec,
    #[serde(default)]
    pub eval: EvalSpec,
    /// Output root override; the CLI falls back to `$ADRM_OUT_ROOT`, then
    /// `./runs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_root: Option<String>,
}

impl ExperimentConfig {
    /// Parse and validate a TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::SchemaError {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parse and validate config text. `origin` labels errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::SchemaError {
                path: origin.to_string(),
                message: e.to_string(),
            })?;
        config.validate().map_err(|e| Error::SchemaError {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid_argument(format!(
                "schema_version {} unsupported (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::invalid_argument(
                "name must be non-empty [a-zA-Z0-9_-]",
            ));
        }
        if self.stream.n_steps < 1 {
            return Err(Error::invalid_argument("stream.n_steps must be >= 1"));
        }
        // TrainConfig validation covers the train section; the seed block
        // passed here is irrelevant to the checks.
        self.train.to_train_config(self.seeds.materialize()).validate()?;
        self.eval.validate()?;
        if let DatasetSpec::Synthetic {
            n_classes, noise, ..
        } = &self.dataset
        {
            if *n_classes < 2 {
                return Err(Error::invalid_argument("dataset.n_classes must be >= 2"));
            }
            if !(0.0..0.5).contains(noise) {
                return Err(Error::invalid_argument("dataset.noise must lie in [0, 0.5)"));
            }
            if self.stream.n_steps > *n_classes {
                return Err(Error::invalid_argument(
                    "stream.n_steps exceeds dataset.n_classes",
                ));
            }
        }
        Ok(())
    }

    /// Materialize all defaulted seeds so the saved snapshot is fully
    /// explicit.
    pub fn normalize(&mut self) {
        self.seeds = SeedsSpec::from_block(self.seeds.materialize());
    }

    pub fn seed_block(&self) -> SeedBlock {
        self.seeds.materialize()
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.to_train_config(self.seed_block())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::SchemaError {
            path: "<serialize>".to_string(),
            message: e.to_string(),
        })
    }

    /// Override the master seed and rederive every stream seed from it.
    pub fn with_master_seed(mut self, master: u64) -> Self {
        self.seeds = SeedsSpec {
            master: Some(master),
            ..SeedsSpec::default()
        };
        self
    }
}

/// All named presets, in listing order.
pub const PRESET_NAMES: [&str; 12] = [
    "desk-finetune",
    "desk-joint",
    "desk-er",
    "desk-adrm-r10",
    "desk-adrm-r25",
    "desk-adrm-r50",
    "desk-adrm-r75",
    "desk-adrm-r100",
    "full-cifar10-finetune",
    "full-cifar10-joint",
    "full-cifar10-er",
    "full-cifar10-adrm-r10",
];

/// One-line description shown by `list-presets`.
pub fn preset_description(name: &str) -> &'static str {
    match name {
        "desk-finetune" => "desk benchmark, sequential training, no memory (forgetting floor)",
        "desk-joint" => "desk benchmark, all tasks at once (accuracy ceiling)",
        "desk-er" => "desk benchmark, experience replay with a 200-slot reservoir",
        "desk-adrm-r10" => "desk benchmark, ADRM with mix ratio 0.10",
        "desk-adrm-r25" => "desk benchmark, ADRM with mix ratio 0.25",
        "desk-adrm-r50" => "desk benchmark, ADRM with mix ratio 0.50",
        "desk-adrm-r75" => "desk benchmark, ADRM with mix ratio 0.75",
        "desk-adrm-r100" => "desk benchmark, ADRM with mix ratio 1.00",
        "full-cifar10-finetune" => "CIFAR-10 resnet32-like, sequential, no memory",
        "full-cifar10-joint" => "CIFAR-10 resnet32-like, all tasks at once",
        "full-cifar10-er" => "CIFAR-10 resnet32-like, replay with a 1024-slot reservoir",
        "full-cifar10-adrm-r10" => "CIFAR-10 resnet32-like, ADRM with mix ratio 0.10",
        _ => "",
    }
}

/// The desk benchmark: a 5-task split of the 10-class synthetic grating set
/// at 16x16, sized so a full run takes seconds, not hours.
fn desk_preset(name: &str, mode: TrainMode, ratio: Option<f64>) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        dataset: DatasetSpec::Synthetic {
            resolution: 16,
            train_per_class: 400,
            test_per_class: 100,
            n_classes: 10,
            noise: 0.12,
            seed: 77,
        },
        stream: StreamSpec {
            n_steps: 5,
            shuffle_classes: false,
            class_order_seed: None,
        },
        train: TrainSection {
            mode,
            architecture: ArchitectureId::SmallCnn,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            lr_decay: 0.1,
            lr_milestones: d_lr_milestones(),
            epochs_first: 10,
            epochs_rest: 5,
            memory_budget: 200,
            buffer_policy: BufferPolicy::Reservoir,
            offer_timing: OfferTiming::PostTask,
            diversification: ratio
                .map(DiversificationSpec::with_ratio)
                .unwrap_or_default(),
            // 45 and 135 degree gratings are mirror images of each other,
            // so horizontal flips would conflate classes; keep them off.
            augment: AugmentConfig {
                flip_p: 0.0,
                crop_pad: 1,
                brightness: (-0.05, 0.05),
                contrast: (0.95, 1.05),
            },
        },
        seeds: SeedsSpec {
            master: Some(DEFAULT_MASTER_SEED),
            ..SeedsSpec::default()
        },
        eval: EvalSpec::default(),
        output_root: None,
    }
}

/// CIFAR-10 at reference scale. Expects the binary batches under
/// `data/cifar-10-batches-bin` (override `dataset.root` in a copied config).
fn full_cifar10_preset(name: &str, mode: TrainMode, ratio: Option<f64>) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        dataset: DatasetSpec::Cifar10Bin {
            root: "data/cifar-10-batches-bin".to_string(),
        },
        stream: StreamSpec {
            n_steps: 5,
            shuffle_classes: false,
            class_order_seed: None,
        },
        train: TrainSection {
            mode,
            architecture: ArchitectureId::Resnet32Like,
            batch_size: d_batch_size(),
            lr: d_lr(),
            momentum: d_momentum(),
            lr_decay: d_lr_decay(),
            lr_milestones: d_lr_milestones(),
            epochs_first: d_epochs_first(),
            epochs_rest: d_epochs_rest(),
            memory_budget: d_memory_budget(),
            buffer_policy: d_buffer_policy(),
            offer_timing: d_offer_timing(),
            diversification: ratio
                .map(DiversificationSpec::with_ratio)
                .unwrap_or_default(),
            augment: AugmentConfig {
                flip_p: 0.5,
                crop_pad: 4,
                brightness: (0.0, 0.0),
                contrast: (1.0, 1.0),
            },
        },
        seeds: SeedsSpec {
            master: Some(DEFAULT_MASTER_SEED),
            ..SeedsSpec::default()
        },
        eval: EvalSpec::default(),
        output_root: None,
    }
}

/// Look up a named preset.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let config = match name {
        "desk-finetune" => desk_preset(name, TrainMode::Finetune, None),
        "desk-joint" => desk_preset(name, TrainMode::Joint, None),
        "desk-er" => desk_preset(name, TrainMode::Er, None),
        "desk-adrm-r10" => desk_preset(name, TrainMode::Adrm, Some(0.10)),
        "desk-adrm-r25" => desk_preset(name, TrainMode::Adrm, Some(0.25)),
        "desk-adrm-r50" => desk_preset(name, TrainMode::Adrm, Some(0.50)),
        "desk-adrm-r75" => desk_preset(name, TrainMode::Adrm, Some(0.75)),
        "desk-adrm-r100" => desk_preset(name, TrainMode::Adrm, Some(1.0)),
        "full-cifar10-finetune" => full_cifar10_preset(name, TrainMode::Finetune, None),
        "full-cifar10-joint" => full_cifar10_preset(name, TrainMode::Joint, None),
        "full-cifar10-er" => full_cifar10_preset(name, TrainMode::Er, None),
        "full-cifar10-adrm-r10" => full_cifar10_preset(name, TrainMode::Adrm, Some(0.10)),
        other => {
            return Err(Error::invalid_argument(format!(
                "unknown preset `{other}`; see list-presets"
            )))
        }
    };
    Ok(config)
}
