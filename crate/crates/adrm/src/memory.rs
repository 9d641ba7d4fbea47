//! Rehearsal memory buffer.
//!
//! Fixed budget, filled by reservoir sampling over the whole stream so every
//! offered example has equal inclusion probability regardless of arrival
//! time. A class-balanced variant is available for comparison runs.

use crate::rng::Stream;
use crate::{Error, Result};
use ndarray::{Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BufferPolicy {
    /// Algorithm R: uniform over everything seen so far.
    Reservoir,
    /// Evict from whichever class currently holds the most slots.
    ClassBalanced,
}

impl Default for BufferPolicy {
    fn default() -> Self {
        BufferPolicy::Reservoir
    }
}

#[derive(Debug, Clone)]
pub struct MemoryEntry {
    /// `[C, H, W]` pixels in `[0, 1]`.
    pub image: Array3<f64>,
    pub label: usize,
    pub source_task_id: usize,
    /// Monotonic admission counter; the class-balanced policy evicts the
    /// oldest entry of the over-represented class.
    seq: u64,
}

#[derive(Debug, Clone)]
pub struct MemoryBuffer {
    budget: usize,
    policy: BufferPolicy,
    entries: Vec<MemoryEntry>,
    /// Total number of examples ever offered.
    seen: u64,
    next_seq: u64,
}

/// A batch drawn from memory: images, labels, and the task each example was
/// stored under.
#[derive(Debug, Clone)]
pub struct MemoryBatch {
    pub images: Array4<f64>,
    pub labels: Vec<usize>,
    pub source_task_ids: Vec<usize>,
}

impl MemoryBuffer {
    pub fn new(budget: usize, policy: BufferPolicy) -> Result<Self> {
        if budget == 0 {
            return Err(Error::invalid_argument("memory budget must be positive"));
        }
        Ok(MemoryBuffer {
            budget,
            policy,
            entries: Vec::new(),
            seen: 0,
            next_seq: 0,
        })
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seen_count(&self) -> u64 {
        self.seen
    }

    pub fn policy(&self) -> BufferPolicy {
        self.policy
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    /// Count of stored entries per label.
    pub fn class_counts(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut counts = std::collections::BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.label).or_insert(0) += 1;
        }
        counts
    }

    /// Offers one example to the buffer. Under the reservoir policy the
    /// example is kept with probability `budget / seen`; under the
    /// class-balanced policy it displaces the oldest entry of the largest
    /// class whenever its own class holds fewer slots.
    pub fn offer(
        &mut self,
        image: Array3<f64>,
        label: usize,
        source_task_id: usize,
        rng: &mut Stream,
    ) -> Result<bool> {
        if image.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_argument("non-finite pixels offered to memory"));
        }
        self.seen += 1;
        let entry = MemoryEntry {
            image,
            label,
            source_task_id,
            seq: self.next_seq,
        };
        self.next_seq += 1;

        if self.entries.len() < self.budget {
            self.entries.push(entry);
            return Ok(true);
        }
        match self.policy {
            BufferPolicy::Reservoir => {
                let j = rng.gen_range(0..self.seen);
                if (j as usize) < self.budget {
                    self.entries[j as usize] = entry;
                    Ok(true)
                } else {
                    Ok(false)
                }
            }
            BufferPolicy::ClassBalanced => {
                let counts = self.class_counts();
                let (&largest, &largest_n) =
                    counts.iter().max_by_key(|(id, n)| (**n, usize::MAX - **id)).unwrap();
                let own = counts.get(&label).copied().unwrap_or(0);
                if own + 1 > largest_n && label != largest {
                    return Ok(false);
                }
                // Evict the oldest member of the largest class.
                let victim = self
                    .entries
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.label == largest)
                    .min_by_key(|(_, e)| e.seq)
                    .map(|(i, _)| i)
                    .unwrap();
                self.entries[victim] = entry;
                Ok(true)
            }
        }
    }

    /// Offers every example of a labelled set in index order.
    pub fn offer_all(
        &mut self,
        images: &Array4<f64>,
        labels: &[usize],
        source_task_id: usize,
        rng: &mut Stream,
    ) -> Result<usize> {
        if images.shape()[0] != labels.len() {
            return Err(Error::invalid_argument("image/label count mismatch"));
        }
        let mut kept = 0;
        for i in 0..labels.len() {
            let img = images.index_axis(ndarray::Axis(0), i).to_owned();
            if self.offer(img, labels[i], source_task_id, rng)? {
                kept += 1;
            }
        }
        Ok(kept)
    }

    /// Draws a rehearsal batch. Without replacement when the buffer holds at
    /// least `batch` entries, with replacement otherwise.
    pub fn sample(&self, batch: usize, rng: &mut Stream) -> Result<MemoryBatch> {
        if self.entries.is_empty() {
            return Err(Error::EmptyMemory);
        }
        if batch == 0 {
            return Err(Error::invalid_argument("rehearsal batch must be positive"));
        }
        let n = self.entries.len();
        let picks: Vec<usize> = if batch <= n {
            // Partial Fisher-Yates over the index range.
            let mut idx: Vec<usize> = (0..n).collect();
            for i in 0..batch {
                let j = rng.gen_range(i..n);
                idx.swap(i, j);
            }
            idx.truncate(batch);
            idx
        } else {
            (0..batch).map(|_| rng.gen_range(0..n)).collect()
        };

        let shape = self.entries[0].image.raw_dim();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let mut images = Array4::zeros((batch, c, h, w));
        let mut labels = Vec::with_capacity(batch);
        let mut tasks = Vec::with_capacity(batch);
        for (slot, &i) in picks.iter().enumerate() {
            images
                .index_axis_mut(ndarray::Axis(0), slot)
                .assign(&self.entries[i].image);
            labels.push(self.entries[i].label);
            tasks.push(self.entries[i].source_task_id);
        }
        Ok(MemoryBatch {
            images,
            labels,
            source_task_ids: tasks,
        })
    }

    /// Flattens the buffer for checkpointing: `(pixels, image_shape, labels,
    /// task_ids, seen, next_seq)`.
    #[allow(clippy::type_complexity)]
    pub fn snapshot(&self) -> (Vec<f64>, Option<[usize; 3]>, Vec<usize>, Vec<usize>, u64, u64) {
        let shape = self.entries.first().map(|e| {
            let d = e.image.raw_dim();
            [d[0], d[1], d[2]]
        });
        let mut pixels = Vec::new();
        let mut labels = Vec::with_capacity(self.entries.len());
        let mut tasks = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            pixels.extend(e.image.iter().copied());
            labels.push(e.label);
            tasks.push(e.source_task_id);
        }
        (pixels, shape, labels, tasks, self.seen, self.next_seq)
    }

    /// Rebuilds a buffer from [`MemoryBuffer::snapshot`] output.
    #[allow(clippy::too_many_arguments)]
    pub fn restore(
        budget: usize,
        policy: BufferPolicy,
        pixels: &[f64],
        image_shape: Option<[usize; 3]>,
        labels: &[usize],
        task_ids: &[usize],
        seen: u64,
        next_seq: u64,
    ) -> Result<Self> {
        let mut buf = MemoryBuffer::new(budget, policy)?;
        if let Some([c, h, w]) = image_shape {
            let per = c * h * w;
            if pixels.len() != per * labels.len() || labels.len() != task_ids.len() {
                return Err(Error::invalid_argument("inconsistent buffer snapshot"));
            }
            if labels.len() > budget {
                return Err(Error::invalid_argument("snapshot exceeds budget"));
            }
            for (i, (&label, &task)) in labels.iter().zip(task_ids.iter()).enumerate() {
                let image =
                    Array3::from_shape_vec((c, h, w), pixels[i * per..(i + 1) * per].to_vec())
                        .map_err(|e| Error::invalid_argument(e.to_string()))?;
                buf.entries.push(MemoryEntry {
                    image,
                    label,
                    source_task_id: task,
                    seq: i as u64,
                });
            }
        }
        buf.seen = seen;
        buf.next_seq = next_seq.max(buf.entries.len() as u64);
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedBlock;

    fn const_image(v: f64) -> Array3<f64> {
        Array3::from_elem((1, 2, 2), v)
    }

    fn run_reservoir(n: u64, budget: usize, seed: u64) -> MemoryBuffer {
        let mut rng = SeedBlock::stream(seed.wrapping_mul(3));
        let mut buf = MemoryBuffer::new(budget, BufferPolicy::Reservoir).unwrap();
        for i in 0..n {
            // Label = arrival bucket (5 buckets over the stream).
            let bucket = (i * 5 / n) as usize;
            buf.offer(const_image(i as f64 / n as f64), bucket, 0, &mut rng)
                .unwrap();
        }
        buf
    }

    #[test]
    fn fills_then_never_exceeds_budget() {
        let buf = run_reservoir(10_000, 1024, 4);
        assert_eq!(buf.len(), 1024);
        assert_eq!(buf.seen_count(), 10_000);

        let small = run_reservoir(100, 1024, 4);
        assert_eq!(small.len(), 100);
    }

    #[test]
    fn reservoir_arrival_buckets_pass_chi_squared() {
        // 10k arrivals labelled by quintile of arrival. Uniform inclusion
        // means ~204.8 survivors per bucket; chi^2 with 4 degrees of freedom
        // stays below the p = 0.01 critical value 13.2767.
        for seed in [11, 23, 57] {
            let buf = run_reservoir(10_000, 1024, seed);
            let counts = buf.class_counts();
            let expected = 1024.0 / 5.0;
            let chi2: f64 = (0..5)
                .map(|b| {
                    let got = counts.get(&b).copied().unwrap_or(0) as f64;
                    (got - expected) * (got - expected) / expected
                })
                .sum();
            assert!(chi2 < 13.2767, "seed {seed}: chi^2 = {chi2}");
        }
    }

    #[test]
    fn early_window_inclusion_stays_within_three_sigma() {
        // Items from the first 10% of the stream should hold about 10% of
        // the final buffer: Binomial(1024, 0.1) => mean 102.4, sigma ~9.6.
        let buf = run_reservoir(10_000, 1024, 11);
        let counts = buf.class_counts();
        let first = counts.get(&0).copied().unwrap_or(0) as f64;
        // Bucket 0 spans the first 20% (quintiles): mean 204.8, sigma ~12.8.
        let mean = 204.8;
        let sigma = (1024.0f64 * 0.2 * 0.8).sqrt();
        assert!((first - mean).abs() < 3.0 * sigma, "count {first}");
    }

    #[test]
    fn sample_without_replacement_when_possible() {
        let mut rng = SeedBlock::stream(9001);
        let mut buf = MemoryBuffer::new(16, BufferPolicy::Reservoir).unwrap();
        for i in 0..10 {
            buf.offer(const_image(i as f64), i, 0, &mut rng).unwrap();
        }
        let batch = buf.sample(10, &mut rng).unwrap();
        let mut seen: Vec<usize> = batch.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 10, "without-replacement draw repeated an entry");

        // Oversized request falls back to with-replacement.
        let batch = buf.sample(25, &mut rng).unwrap();
        assert_eq!(batch.images.shape()[0], 25);
        assert_eq!(batch.labels.len(), 25);
    }

    #[test]
    fn empty_buffer_refuses_to_sample() {
        let mut rng = SeedBlock::stream(9001);
        let buf = MemoryBuffer::new(4, BufferPolicy::Reservoir).unwrap();
        assert!(matches!(buf.sample(2, &mut rng), Err(Error::EmptyMemory)));
    }

    #[test]
    fn zero_budget_is_rejected() {
        assert!(matches!(
            MemoryBuffer::new(0, BufferPolicy::Reservoir),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn class_balanced_policy_tracks_per_class_quota() {
        let mut rng = SeedBlock::stream(5008);
        let mut buf = MemoryBuffer::new(10, BufferPolicy::ClassBalanced).unwrap();
        // Fill entirely with class 0, then stream class 1.
        for i in 0..10 {
            buf.offer(const_image(i as f64), 0, 0, &mut rng).unwrap();
        }
        for i in 0..5 {
            buf.offer(const_image(100.0 + i as f64), 1, 1, &mut rng).unwrap();
        }
        let counts = buf.class_counts();
        assert_eq!(counts[&0], 5);
        assert_eq!(counts[&1], 5);
        assert_eq!(buf.len(), 10);
    }

    #[test]
    fn snapshot_roundtrip_preserves_contents_and_counters() {
        let buf = run_reservoir(500, 64, 3);
        let (pixels, shape, labels, tasks, seen, next_seq) = buf.snapshot();
        let back = MemoryBuffer::restore(
            64,
            BufferPolicy::Reservoir,
            &pixels,
            shape,
            &labels,
            &tasks,
            seen,
            next_seq,
        )
        .unwrap();
        assert_eq!(back.len(), buf.len());
        assert_eq!(back.seen_count(), 500);
        for (a, b) in back.entries().iter().zip(buf.entries().iter()) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.image, b.image);
        }
    }

    #[test]
    fn sampling_is_deterministic_under_a_fixed_stream() {
        let buf = run_reservoir(500, 64, 3);
        let mut r1 = SeedBlock::stream(77002);
        let mut r2 = SeedBlock::stream(77002);
        let b1 = buf.sample(32, &mut r1).unwrap();
        let b2 = buf.sample(32, &mut r2).unwrap();
        assert_eq!(b1.labels, b2.labels);
        assert_eq!(b1.images, b2.images);
    }
}
