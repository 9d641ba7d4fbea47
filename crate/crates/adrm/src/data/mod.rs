//! Datasets and class-incremental task streams.
//!
//! All image data lives in `[0,1]` pixel space as `[N, C, H, W]` arrays of
//! `f64`; any per-channel normalization happens inside the model, so
//! perturbations and corruptions computed here keep their `1/255`-scale
//! meaning.

mod augment;
mod corrupt;
mod synthetic;

pub use augment::{augment_batch, AugmentConfig};
pub use corrupt::{
    corrupt, export_corrupted_set, CorruptionKind, CorruptionSpec, ALL_CORRUPTION_KINDS,
};
pub use synthetic::synthetic_dataset;

use crate::{Error, Result};
use ndarray::{Array4, ArrayView3, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which split of a dataset a handle holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A labeled image split held in memory.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    pub name: String,
    pub split: Split,
    /// `[N, C, H, W]`, values in `[0,1]`.
    pub images: Array4<f64>,
    /// One label per image, each in `[0, n_classes)`.
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl DatasetHandle {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, i: usize) -> ArrayView3<'_, f64> {
        self.images.index_axis(Axis(0), i)
    }

    /// Gather a batch `[B, C, H, W]` from example indices.
    pub fn gather(&self, indices: &[usize]) -> (Array4<f64>, Vec<usize>) {
        let (_, c, h, w) = shape4(&self.images);
        let mut out = Array4::zeros((indices.len(), c, h, w));
        let mut labels = Vec::with_capacity(indices.len());
        for (bi, &i) in indices.iter().enumerate() {
            out.index_axis_mut(Axis(0), bi).assign(&self.image(i));
            labels.push(self.labels[i]);
        }
        (out, labels)
    }

    /// Check the handle's invariants: label range, finiteness, pixel range.
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.len() {
            return Err(Error::invalid_argument(format!(
                "dataset {}: {} labels for {} images",
                self.name,
                self.labels.len(),
                self.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::invalid_argument(format!(
                "dataset {}: label {bad} out of range [0, {})",
                self.name, self.n_classes
            )));
        }
        for &v in self.images.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid_argument(format!(
                    "dataset {}: pixel value {v} outside [0,1]",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Train and test splits of one dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: DatasetHandle,
    pub test: DatasetHandle,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.train.n_classes
    }

    /// `(C, H, W)` of a single image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let (_, c, h, w) = shape4(&self.train.images);
        (c, h, w)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.test.validate()?;
        if self.train.n_classes != self.test.n_classes {
            return Err(Error::invalid_argument(
                "train/test class counts differ".to_string(),
            ));
        }
        Ok(())
    }
}

/// One class-incremental step: a disjoint set of classes plus the example
/// indices (into the train and test handles) that carry those classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Task {
    pub task_id: usize,
    pub class_ids: Vec<usize>,
    pub train_subset: Vec<usize>,
    pub test_subset: Vec<usize>,
}

/// Parameters that produced a task stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_steps: usize,
    pub first_task_class_count: usize,
    pub class_order_seed: Option<u64>,
}

/// Ordered class-incremental split of a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub split_spec: SplitSpec,
}

impl TaskStream {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// All classes in presentation order (task by task).
    pub fn class_order(&self) -> Vec<usize> {
        self.tasks.iter().flat_map(|t| t.class_ids.clone()).collect()
    }

    /// Collapse the stream into a single task holding every class; used by
    /// joint training.
    pub fn collapsed(&self) -> TaskStream {
        let mut class_ids = Vec::new();
        let mut train_subset = Vec::new();
        let mut test_subset = Vec::new();
        for t in &self.tasks {
            class_ids.extend_from_slice(&t.class_ids);
            train_subset.extend_from_slice(&t.train_subset);
            test_subset.extend_from_slice(&t.test_subset);
        }
        class_ids.sort_unstable();
        train_subset.sort_unstable();
        test_subset.sort_unstable();
        TaskStream {
            tasks: vec![Task {
                task_id: 0,
                class_ids,
                train_subset,
                test_subset,
            }],
            split_spec: SplitSpec {
                n_steps: 1,
                first_task_class_count: self.split_spec.first_task_class_count
                    + self.tasks.iter().skip(1).map(|t| t.class_ids.len()).sum::<usize>(),
                class_order_seed: self.split_spec.class_order_seed,
            },
        }
    }
}

/// Split a dataset's classes into `n_steps` disjoint tasks.
///
/// Later tasks each hold `K / n_steps` classes (integer division) and the
/// first task absorbs the remainder, so 10 classes over 9 steps yields
/// `[2, 1, 1, ...]` and over 5 steps `[2, 2, 2, 2, 2]`. Class order is the
/// natural label order unless `class_order_seed` is given, in which case it
/// is a seeded shuffle.
pub fn make_task_stream(
    dataset: &Dataset,
    n_steps: usize,
    class_order_seed: Option<u64>,
) -> Result<TaskStream> {
    let k = dataset.n_classes();
    if n_steps < 1 {
        return Err(Error::invalid_argument("n_steps must be >= 1".to_string()));
    }
    if n_steps > k {
        return Err(Error::InvalidSplit(format!(
            "cannot split {k} classes into {n_steps} tasks"
        )));
    }

    let mut order: Vec<usize> = (0..k).collect();
    if let Some(seed) = class_order_seed {
        let mut rng = crate::rng::SeedBlock::stream(seed);
        order.shuffle(&mut rng);
    }

    let per = k / n_steps;
    let first = k - (n_steps - 1) * per;

    let mut tasks = Vec::with_capacity(n_steps);
    let mut cursor = 0usize;
    for task_id in 0..n_steps {
        let count = if task_id == 0 { first } else { per };
        let mut class_ids: Vec<usize> = order[cursor..cursor + count].to_vec();
        cursor += count;
        class_ids.sort_unstable();

        let member = |label: usize| class_ids.binary_search(&label).is_ok();
        let train_subset: Vec<usize> = dataset
            .train
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| member(l))
            .map(|(i, _)| i)
            .collect();
        let test_subset: Vec<usize> = dataset
            .test
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| member(l))
            .map(|(i, _)| i)
            .collect();

        tasks.push(Task {
            task_id,
            class_ids,
            train_subset,
            test_subset,
        });
    }

    Ok(TaskStream {
        tasks,
        split_spec: SplitSpec {
            n_steps,
            first_task_class_count: first,
            class_order_seed,
        },
    })
}

/// Load a dataset from a directory of PNG images plus a `labels.csv`
/// manifest with `split,path,label` rows.
pub fn load_image_dir(root: &Path, name: &str) -> Result<Dataset> {
    let manifest = root.join("labels.csv");
    if !manifest.exists() {
        return Err(Error::ArtifactNotFound(manifest.display().to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&manifest)
        .map_err(|e| Error::BadArtifact {
            path: manifest.display().to_string(),
            message: e.to_string(),
        })?;

    let mut rows: Vec<(Split, String, usize)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::BadArtifact {
            path: manifest.display().to_string(),
            message: e.to_string(),
        })?;
        let split = match record.get(0).unwrap_or("") {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::BadArtifact {
                    path: manifest.display().to_string(),
                    message: format!("unknown split `{other}`"),
                })
            }
        };
        let path = record.get(1).unwrap_or("").to_string();
        let label: usize = record
            .get(2)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::BadArtifact {
                path: manifest.display().to_string(),
                message: format!("bad label in row for `{path}`"),
            })?;
        rows.push((split, path, label));
    }
    if rows.is_empty() {
        return Err(Error::invalid_argument("empty label manifest".to_string()));
    }
    let n_classes = rows.iter().map(|r| r.2).max().unwrap() + 1;

    let load_split = |split: Split| -> Result<DatasetHandle> {
        let selected: Vec<&(Split, String, usize)> =
            rows.iter().filter(|r| r.0 == split).collect();
        let mut images: Option<Array4<f64>> = None;
        let mut labels = Vec::with_capacity(selected.len());
        for (i, (_, rel, label)) in selected.iter().enumerate() {
            let img = image::open(root.join(rel))
                .map_err(|e| Error::BadArtifact {
                    path: rel.clone(),
                    message: e.to_string(),
                })?
                .to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let store = images.get_or_insert_with(|| {
                Array4::zeros((selected.len(), 3, h, w))
            });
            if store.shape()[2] != h || store.shape()[3] != w {
                return Err(Error::invalid_argument(format!(
                    "image `{rel}` has size {h}x{w}, expected {}x{}",
                    store.shape()[2],
                    store.shape()[3]
                )));
            }
            for y in 0..h {
                for x in 0..w {
                    let px = img.get_pixel(x as u32, y as u32);
                    for c in 0..3 {
                        store[[i, c, y, x]] = px.0[c] as f64 / 255.0;
                    }
                }
            }
            labels.push(*label);
        }
        Ok(DatasetHandle {
            name: name.to_string(),
            split,
            images: images.unwrap_or_else(|| Array4::zeros((0, 3, 0, 0))),
            labels,
            n_classes,
        })
    };

    let dataset = Dataset {
        train: load_split(Split::Train)?,
        test: load_split(Split::Test)?,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Load the CIFAR-10 binary release (`data_batch_{1..5}.bin`, `test_batch.bin`).
pub fn load_cifar10_bin(root: &Path) -> Result<Dataset> {
    const RECORD: usize = 3073;
    let read_file = |path: &Path, images: &mut Vec<f64>, labels: &mut Vec<usize>| -> Result<()> {
        let bytes = std::fs::read(path)?;
        if bytes.len() % RECORD != 0 {
            return Err(Error::BadArtifact {
                path: path.display().to_string(),
                message: format!("size {} is not a multiple of {RECORD}", bytes.len()),
            });
        }
        for rec in bytes.chunks_exact(RECORD) {
            labels.push(rec[0] as usize);
            images.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
        }
        Ok(())
    };

    let mut train_px = Vec::new();
    let mut train_labels = Vec::new();
    for i in 1..=5 {
        let path = root.join(format!("data_batch_{i}.bin"));
        if !path.exists() {
            return Err(Error::ArtifactNotFound(path.display().to_string()));
        }
        read_file(&path, &mut train_px, &mut train_labels)?;
    }
    let mut test_px = Vec::new();
    let mut test_labels = Vec::new();
    read_file(&root.join("test_batch.bin"), &mut test_px, &mut test_labels)?;

    let to_handle = |px: Vec<f64>, labels: Vec<usize>, split: Split| -> Result<DatasetHandle> {
        let n = labels.len();
        let images = Array4::from_shape_vec((n, 3, 32, 32), px)
            .map_err(|e| Error::invalid_argument(e.to_string()))?;
        Ok(DatasetHandle {
            name: "cifar10".to_string(),
            split,
            images,
            labels,
            n_classes: 10,
        })
    };
    let dataset = Dataset {
        train: to_handle(train_px, train_labels, Split::Train)?,
        test: to_handle(test_px, test_labels, Split::Test)?,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub(crate) fn shape4(a: &Array4<f64>) -> (usize, usize, usize, usize) {
    let s = a.shape();
    (s[0], s[1], s[2], s[3])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(k: usize, per_class: usize) -> Dataset {
        let n = k * per_class;
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            labels.push(i % k);
        }
        let images = Array4::from_elem((n, 1, 2, 2), 0.5);
        let handle = |split| DatasetHandle {
            name: "toy".to_string(),
            split,
            images: images.clone(),
            labels: labels.clone(),
            n_classes: k,
        };
        Dataset {
            train: handle(Split::Train),
            test: handle(Split::Test),
        }
    }

    #[test]
    fn two_step_split_is_five_five() {
        let ds = toy_dataset(10, 3);
        let stream = make_task_stream(&ds, 2, None).unwrap();
        let counts: Vec<usize> = stream.tasks.iter().map(|t| t.class_ids.len()).collect();
        assert_eq!(counts, vec![5, 5]);
    }

    #[test]
    fn single_step_is_joint() {
        let ds = toy_dataset(10, 2);
        let stream = make_task_stream(&ds, 1, None).unwrap();
        assert_eq!(stream.tasks.len(), 1);
        assert_eq!(stream.tasks[0].class_ids, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn nine_step_split_counts() {
        // Oracle: enumerate partitions of 10 classes into 9 non-empty tasks
        // under the first-task-absorbs-remainder rule.
        let k = 10;
        let n_steps = 9;
        let per = k / n_steps;
        let mut expected = vec![k - (n_steps - 1) * per];
        expected.extend(std::iter::repeat(per).take(n_steps - 1));
        assert_eq!(expected, vec![2, 1, 1, 1, 1, 1, 1, 1, 1]);

        let ds = toy_dataset(10, 2);
        let stream = make_task_stream(&ds, 9, None).unwrap();
        let counts: Vec<usize> = stream.tasks.iter().map(|t| t.class_ids.len()).collect();
        assert_eq!(counts, expected);
    }

    #[test]
    fn tasks_partition_the_label_universe() {
        let ds = toy_dataset(7, 4);
        for n_steps in 1..=7 {
            let stream = make_task_stream(&ds, n_steps, Some(11)).unwrap();
            let mut all: Vec<usize> = stream.class_order();
            all.sort_unstable();
            assert_eq!(all, (0..7).collect::<Vec<_>>());
            // every example in each subset carries a label of that task
            for task in &stream.tasks {
                for &i in &task.train_subset {
                    assert!(task.class_ids.contains(&ds.train.labels[i]));
                }
                for &i in &task.test_subset {
                    assert!(task.class_ids.contains(&ds.test.labels[i]));
                }
            }
        }
    }

    #[test]
    fn split_errors() {
        let ds = toy_dataset(4, 2);
        assert!(matches!(
            make_task_stream(&ds, 5, None),
            Err(Error::InvalidSplit(_))
        ));
        assert!(matches!(
            make_task_stream(&ds, 0, None),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn seeded_split_is_reproducible() {
        let ds = toy_dataset(10, 2);
        let a = make_task_stream(&ds, 5, Some(3)).unwrap();
        let b = make_task_stream(&ds, 5, Some(3)).unwrap();
        for (ta, tb) in a.tasks.iter().zip(b.tasks.iter()) {
            assert_eq!(ta.class_ids, tb.class_ids);
            assert_eq!(ta.train_subset, tb.train_subset);
        }
    }

    #[test]
    fn collapsed_stream_has_everything() {
        let ds = toy_dataset(10, 2);
        let stream = make_task_stream(&ds, 5, None).unwrap();
        let joint = stream.collapsed();
        assert_eq!(joint.tasks.len(), 1);
        assert_eq!(joint.tasks[0].class_ids.len(), 10);
        assert_eq!(joint.tasks[0].train_subset.len(), ds.train.len());
    }
}
