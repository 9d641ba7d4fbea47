//! Adversarial diversification of rehearsal batches.
//!
//! Each memory sample gets its own FGSM perturbation with an epsilon drawn
//! uniformly from a configured range. The perturbed copies are then split by
//! what the current model says about them: samples the model now gets wrong
//! (`fooled`) sit near decision boundaries, samples it still gets right
//! (`resisted`) are hard positives. Mixing both kinds back into the
//! rehearsal batch is what distinguishes this method from plain replay.

use crate::model::{Classifier, GradientSource};
use crate::rng::Stream;
use crate::{Error, Result};
use ndarray::{Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Smallest representable pixel step, the default lower epsilon.
pub const EPSILON_LOW_DEFAULT: f64 = 1.0 / 255.0;
/// Default upper epsilon of the diversification range.
pub const EPSILON_HIGH_DEFAULT: f64 = 16.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiversificationSpec {
    /// Mix ratio `r`: fraction of the rehearsal batch size appended from
    /// each perturbed subset. Zero disables diversification entirely.
    pub ratio: f64,
    /// Per-sample epsilons are drawn uniformly from this closed range.
    pub epsilon_low: f64,
    pub epsilon_high: f64,
}

impl Default for DiversificationSpec {
    fn default() -> Self {
        DiversificationSpec {
            ratio: 0.0,
            epsilon_low: EPSILON_LOW_DEFAULT,
            epsilon_high: EPSILON_HIGH_DEFAULT,
        }
    }
}

impl DiversificationSpec {
    pub fn with_ratio(ratio: f64) -> Self {
        DiversificationSpec {
            ratio,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) || !self.ratio.is_finite() {
            return Err(Error::invalid_argument("mix ratio must lie in [0, 1]"));
        }
        if !self.epsilon_low.is_finite() || !self.epsilon_high.is_finite() {
            return Err(Error::invalid_argument("epsilon range must be finite"));
        }
        if self.epsilon_low < 0.0 || self.epsilon_high < self.epsilon_low {
            return Err(Error::invalid_argument(
                "epsilon range needs 0 <= low <= high",
            ));
        }
        Ok(())
    }
}

/// Outcome of perturbing one rehearsal batch.
#[derive(Debug, Clone)]
pub struct DiversifiedBatch {
    /// The clean inputs, unchanged.
    pub originals: Array4<f64>,
    pub labels: Vec<usize>,
    /// FGSM-perturbed copies, aligned with `originals`.
    pub perturbed: Array4<f64>,
    /// Per-sample epsilon actually used.
    pub epsilons: Vec<f64>,
    /// Indices whose perturbed copy the model misclassifies.
    pub fooled_idx: Vec<usize>,
    /// Indices whose perturbed copy the model still gets right.
    pub resisted_idx: Vec<usize>,
}

impl DiversifiedBatch {
    pub fn n_fooled(&self) -> usize {
        self.fooled_idx.len()
    }

    pub fn n_resisted(&self) -> usize {
        self.resisted_idx.len()
    }

    pub fn mean_epsilon(&self) -> f64 {
        if self.epsilons.is_empty() {
            return 0.0;
        }
        self.epsilons.iter().sum::<f64>() / self.epsilons.len() as f64
    }

    /// Share of the batch the perturbation flipped to a wrong prediction.
    pub fn fooling_rate(&self) -> f64 {
        let n = self.n_fooled() + self.n_resisted();
        if n == 0 {
            return 0.0;
        }
        self.n_fooled() as f64 / n as f64
    }

    fn gather(&self, idx: &[usize]) -> (Array4<f64>, Vec<usize>) {
        let s = self.perturbed.shape();
        let mut images = Array4::zeros((idx.len(), s[1], s[2], s[3]));
        let mut labels = Vec::with_capacity(idx.len());
        for (slot, &i) in idx.iter().enumerate() {
            images
                .index_axis_mut(Axis(0), slot)
                .assign(&self.perturbed.index_axis(Axis(0), i));
            labels.push(self.labels[i]);
        }
        (images, labels)
    }

    /// Perturbed samples the model misclassifies, with their true labels.
    pub fn fooled(&self) -> (Array4<f64>, Vec<usize>) {
        self.gather(&self.fooled_idx)
    }

    /// Perturbed samples the model still classifies correctly.
    pub fn resisted(&self) -> (Array4<f64>, Vec<usize>) {
        self.gather(&self.resisted_idx)
    }
}

/// Perturbs every sample with its own epsilon and partitions the results by
/// the model's verdict.
///
/// Draw order is fixed: one epsilon per sample, in batch order, before any
/// gradient work — so the stream position after this call depends only on
/// the batch size.
pub fn diversify(
    grads: &dyn GradientSource,
    classifier: &dyn Classifier,
    images: &Array4<f64>,
    labels: &[usize],
    spec: &DiversificationSpec,
    rng: &mut Stream,
) -> Result<DiversifiedBatch> {
    spec.validate()?;
    let b = images.shape()[0];
    if b == 0 {
        return Err(Error::invalid_argument("cannot diversify an empty batch"));
    }
    if labels.len() != b {
        return Err(Error::invalid_argument("image/label count mismatch"));
    }

    let epsilons: Vec<f64> = (0..b)
        .map(|_| {
            if spec.epsilon_high > spec.epsilon_low {
                rng.gen_range(spec.epsilon_low..=spec.epsilon_high)
            } else {
                spec.epsilon_low
            }
        })
        .collect();

    // One gradient pass for the whole batch: the mean-loss input gradient of
    // sample i is the per-sample gradient scaled by 1/B, and FGSM only reads
    // the sign.
    let (_, g) = grads.input_gradients(images, labels)?;
    let mut perturbed = images.clone();
    for i in 0..b {
        let eps = epsilons[i];
        let gi = g.index_axis(Axis(0), i);
        let xi = images.index_axis(Axis(0), i);
        let mut pi = perturbed.index_axis_mut(Axis(0), i);
        ndarray::Zip::from(&mut pi).and(&gi).and(&xi).for_each(|p, &gv, &xv| {
            let sign = if gv > 0.0 {
                1.0
            } else if gv < 0.0 {
                -1.0
            } else {
                0.0
            };
            *p = (xv + eps * sign).clamp(0.0, 1.0);
        });
    }

    let verdicts = classifier.predict(&perturbed)?;
    let mut fooled_idx = Vec::new();
    let mut resisted_idx = Vec::new();
    for (i, &pred) in verdicts.iter().enumerate() {
        if pred == labels[i] {
            resisted_idx.push(i);
        } else {
            fooled_idx.push(i);
        }
    }

    Ok(DiversifiedBatch {
        originals: images.clone(),
        labels: labels.to_vec(),
        perturbed,
        epsilons,
        fooled_idx,
        resisted_idx,
    })
}

/// Appends `min(floor(ratio * B), |subset|)` samples from each perturbed
/// subset onto the clean rehearsal batch, fooled picks first. Subsets are
/// subsampled without replacement; a quota of zero draws nothing from the
/// stream, so a zero ratio returns the clean batch with `rng` untouched.
pub fn mix_rehearsal(
    images: &Array4<f64>,
    labels: &[usize],
    diversified: &DiversifiedBatch,
    ratio: f64,
    rng: &mut Stream,
) -> Result<(Array4<f64>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&ratio) || !ratio.is_finite() {
        return Err(Error::invalid_argument("mix ratio must lie in [0, 1]"));
    }
    let b = images.shape()[0];
    if labels.len() != b {
        return Err(Error::invalid_argument("image/label count mismatch"));
    }
    let quota = (ratio * b as f64).floor() as usize;
    let take_fooled = quota.min(diversified.n_fooled());
    let take_resisted = quota.min(diversified.n_resisted());
    if take_fooled + take_resisted == 0 {
        return Ok((images.clone(), labels.to_vec()));
    }

    let mut pick = |pool: &[usize], take: usize| -> Vec<usize> {
        if take == 0 {
            return Vec::new();
        }
        let mut idx = pool.to_vec();
        for i in 0..take {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        idx.truncate(take);
        idx
    };
    let fooled_picks = pick(&diversified.fooled_idx, take_fooled);
    let resisted_picks = pick(&diversified.resisted_idx, take_resisted);

    let s = images.shape();
    let total = b + take_fooled + take_resisted;
    let mut out = Array4::zeros((total, s[1], s[2], s[3]));
    let mut out_labels = Vec::with_capacity(total);
    out.slice_mut(ndarray::s![..b, .., .., ..]).assign(images);
    out_labels.extend_from_slice(labels);
    for (slot, &i) in fooled_picks.iter().chain(resisted_picks.iter()).enumerate() {
        out.index_axis_mut(Axis(0), b + slot)
            .assign(&diversified.perturbed.index_axis(Axis(0), i));
        out_labels.push(diversified.labels[i]);
    }
    Ok((out, out_labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchitectureId, Model};
    use crate::rng::SeedBlock;

    #[test]
    fn partial_toml_fills_the_epsilon_range_from_defaults() {
        let spec: DiversificationSpec = toml::from_str("ratio = 0.25").unwrap();
        assert_eq!(spec.ratio, 0.25);
        assert_eq!(spec.epsilon_low, EPSILON_LOW_DEFAULT);
        assert_eq!(spec.epsilon_high, EPSILON_HIGH_DEFAULT);
    }

    /// Gradient stub with a constant per-pixel gradient.
    struct ConstGrad(f64);

    impl GradientSource for ConstGrad {
        fn input_gradients(
            &self,
            images: &Array4<f64>,
            _labels: &[usize],
        ) -> crate::Result<(f64, Array4<f64>)> {
            Ok((0.0, Array4::from_elem(images.raw_dim(), self.0)))
        }
    }

    /// Classifier stub that answers from a fixed script.
    struct Scripted(Vec<usize>);

    impl Classifier for Scripted {
        fn predict(&self, images: &Array4<f64>) -> crate::Result<Vec<usize>> {
            Ok(self.0[..images.shape()[0]].to_vec())
        }
    }

    /// Classifier stub that always agrees with the bright/dark rule used by
    /// the linear oracle test.
    struct Oracle;

    impl Classifier for Oracle {
        fn predict(&self, images: &Array4<f64>) -> crate::Result<Vec<usize>> {
            Ok(images
                .axis_iter(Axis(0))
                .map(|im| {
                    let mean = im.sum() / im.len() as f64;
                    usize::from(mean > 0.5)
                })
                .collect())
        }
    }

    fn batch_of(values: &[f64]) -> Array4<f64> {
        let mut a = Array4::zeros((values.len(), 1, 4, 4));
        for (i, &v) in values.iter().enumerate() {
            a.index_axis_mut(Axis(0), i).fill(v);
        }
        a
    }

    #[test]
    fn zero_epsilon_partitions_exactly_like_clean_predictions() {
        // With epsilon pinned to zero the perturbed batch is the clean
        // batch, so the split must mirror the clean verdicts.
        let spec = DiversificationSpec {
            ratio: 0.5,
            epsilon_low: 0.0,
            epsilon_high: 0.0,
        };
        let images = batch_of(&[0.2, 0.8, 0.4, 0.9]);
        let labels = vec![0, 1, 1, 0]; // third and fourth are wrong
        let clf = Oracle;
        let mut rng = SeedBlock::stream(7001);
        let div = diversify(&ConstGrad(1.0), &clf, &images, &labels, &spec, &mut rng).unwrap();
        assert_eq!(div.perturbed, images);
        assert_eq!(div.resisted_idx, vec![0, 1]);
        assert_eq!(div.fooled_idx, vec![2, 3]);
    }

    #[test]
    fn partition_matches_a_hand_derived_flip_rule() {
        // Linear two-class model over uniform images: prediction is
        // bright/dark of the mean pixel. The loss gradient for a correctly
        // labelled bright image points down (and vice versa), so a sample at
        // value v with label 1 flips exactly when v - eps <= 0.5.
        let mut rng_model = SeedBlock::stream(8001);
        let mut model =
            Model::init_with_n_classes(ArchitectureId::Linear, (1, 4, 4), 2, &mut rng_model)
                .unwrap();
        {
            let mut p = model.params_mut();
            p[0].fill(0.0);
            for j in 0..16 {
                p[0][[0, j]] = -1.0;
                p[0][[1, j]] = 1.0;
            }
            // Boundary at mean pixel 0.5 <=> sum 8 over 16 unit pixels.
            p[1][[0]] = 8.0;
            p[1][[1]] = -8.0;
        }

        let values = [0.52, 0.55, 0.58, 0.62, 0.66, 0.70];
        let images = batch_of(&values);
        let labels = vec![1; values.len()];
        let spec = DiversificationSpec {
            ratio: 0.5,
            epsilon_low: 1.0 / 255.0,
            epsilon_high: 16.0 / 255.0,
        };
        let mut rng = SeedBlock::stream(9002);
        let div = diversify(&model, &model, &images, &labels, &spec, &mut rng).unwrap();

        for (i, &v) in values.iter().enumerate() {
            let eps = div.epsilons[i];
            let expect_fooled = v - eps <= 0.5;
            assert_eq!(
                div.fooled_idx.contains(&i),
                expect_fooled,
                "sample {i}: v={v}, eps={eps}"
            );
        }
    }

    #[test]
    fn partition_is_consistent_with_reclassifying_the_perturbed_batch() {
        let mut rng_model = SeedBlock::stream(10001);
        let model =
            Model::init_with_n_classes(ArchitectureId::SmallCnn, (3, 8, 8), 3, &mut rng_model)
                .unwrap();
        use rand::Rng;
        let mut rng_data = SeedBlock::stream(11001);
        let images = Array4::from_shape_fn((12, 3, 8, 8), |_| rng_data.gen_range(0.0..1.0));
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let spec = DiversificationSpec::with_ratio(0.5);
        let mut rng = SeedBlock::stream(12002);
        let div = diversify(&model, &model, &images, &labels, &spec, &mut rng).unwrap();

        use crate::model::Classifier;
        let verdicts = model.predict(&div.perturbed).unwrap();
        for i in 0..12 {
            let fooled = verdicts[i] != labels[i];
            assert_eq!(div.fooled_idx.contains(&i), fooled);
            assert_eq!(div.resisted_idx.contains(&i), !fooled);
        }
        assert_eq!(div.n_fooled() + div.n_resisted(), 12);
        for &e in &div.epsilons {
            assert!((1.0 / 255.0..=16.0 / 255.0).contains(&e));
        }
    }

    #[test]
    fn unbeatable_classifier_yields_no_fooled_samples() {
        let clf = Scripted(vec![0, 1, 0, 1]);
        let images = batch_of(&[0.3, 0.6, 0.4, 0.7]);
        let labels = vec![0, 1, 0, 1];
        let spec = DiversificationSpec::with_ratio(1.0);
        let mut rng = SeedBlock::stream(13002);
        let div = diversify(&ConstGrad(-1.0), &clf, &images, &labels, &spec, &mut rng).unwrap();
        assert!(div.fooled_idx.is_empty());
        assert_eq!(div.n_resisted(), 4);
    }

    #[test]
    fn mix_sizes_follow_the_quota_rule() {
        // Rehearsal batch of 20, ratio 0.1 => quota 2 per subset. One fooled
        // sample and seven resisted: append min(2,1) + min(2,7) = 3 => 23.
        let base = batch_of(&vec![0.5; 20]);
        let base_labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let div = DiversifiedBatch {
            originals: batch_of(&vec![0.5; 8]),
            labels: (0..8).map(|i| i % 2).collect(),
            perturbed: batch_of(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]),
            epsilons: vec![0.01; 8],
            fooled_idx: vec![3],
            resisted_idx: vec![0, 1, 2, 4, 5, 6, 7],
        };
        let mut rng = SeedBlock::stream(14002);
        let (mixed, labels) = mix_rehearsal(&base, &base_labels, &div, 0.1, &mut rng).unwrap();
        assert_eq!(mixed.shape()[0], 23);
        assert_eq!(labels.len(), 23);
        // The fooled sample (index 3, value 0.4) is always appended first.
        assert!((mixed[[20, 0, 0, 0]] - 0.4).abs() < 1e-15);
        assert_eq!(labels[20], 1);
    }

    #[test]
    fn zero_ratio_returns_the_batch_untouched_without_consuming_randomness() {
        let base = batch_of(&[0.2, 0.4]);
        let base_labels = vec![0, 1];
        let div = DiversifiedBatch {
            originals: base.clone(),
            labels: base_labels.clone(),
            perturbed: base.clone(),
            epsilons: vec![0.0; 2],
            fooled_idx: vec![0],
            resisted_idx: vec![1],
        };
        let mut rng = SeedBlock::stream(15002);
        let mut twin = SeedBlock::stream(15002);
        let (mixed, labels) = mix_rehearsal(&base, &base_labels, &div, 0.0, &mut rng).unwrap();
        assert_eq!(mixed, base);
        assert_eq!(labels, base_labels);
        // No draws happened: the stream is exactly where the twin is.
        use rand::Rng;
        assert_eq!(rng.gen::<u64>(), twin.gen::<u64>());
    }

    #[test]
    fn diversification_is_deterministic_per_stream() {
        let mut rng_model = SeedBlock::stream(16001);
        let model =
            Model::init_with_n_classes(ArchitectureId::SmallCnn, (3, 8, 8), 3, &mut rng_model)
                .unwrap();
        use rand::Rng;
        let mut rng_data = SeedBlock::stream(17001);
        let images = Array4::from_shape_fn((6, 3, 8, 8), |_| rng_data.gen_range(0.0..1.0));
        let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
        let spec = DiversificationSpec::with_ratio(0.25);
        let mut r1 = SeedBlock::stream(18002);
        let mut r2 = SeedBlock::stream(18002);
        let d1 = diversify(&model, &model, &images, &labels, &spec, &mut r1).unwrap();
        let d2 = diversify(&model, &model, &images, &labels, &spec, &mut r2).unwrap();
        assert_eq!(d1.perturbed, d2.perturbed);
        assert_eq!(d1.epsilons, d2.epsilons);
        assert_eq!(d1.fooled_idx, d2.fooled_idx);
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(DiversificationSpec { ratio: 1.5, ..Default::default() }.validate().is_err());
        assert!(DiversificationSpec {
            epsilon_low: 0.1,
            epsilon_high: 0.05,
            ratio: 0.5
        }
        .validate()
        .is_err());
        assert!(DiversificationSpec {
            epsilon_low: -0.01,
            epsilon_high: 0.05,
            ratio: 0.5
        }
        .validate()
        .is_err());
    }
}
