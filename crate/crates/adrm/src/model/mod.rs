//! Model: a network plus the bookkeeping continual learning needs — which
//! global class each head column stands for, and how to grow the head when a
//! new task arrives.

pub mod arch;
pub mod layers;

pub use arch::{ArchitectureId, ALL_ARCHITECTURES};
pub use layers::Network;

use crate::rng::Stream;
use crate::{Error, Result};
use ndarray::{concatenate, Array2, Array4, ArrayD, Axis, Ix2};

/// Logits plus the activation feeding the classifier head.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[B, n_head]`, column order matches [`Model::class_cols`].
    pub logits: Array2<f64>,
    /// `[B, F]` penultimate features, the representation CKA compares.
    pub features: Array2<f64>,
}

/// Loss value with gradients for one labelled batch.
#[derive(Debug)]
pub struct LossGrads {
    pub loss: f64,
    /// Aligned with [`Model::params`] order; `None` when only input
    /// gradients were requested.
    pub param_grads: Option<Vec<ArrayD<f64>>>,
    /// `d(loss)/d(pixels)`, same shape as the input batch.
    pub input_grads: Array4<f64>,
}

/// Anything that can score a batch and expose pixel gradients. Attacks and
/// the rehearsal diversifier are written against this so tests can drive
/// them with hand-computed stand-ins.
pub trait GradientSource {
    /// Mean cross-entropy over the batch and its gradient w.r.t. the input.
    fn input_gradients(&self, images: &Array4<f64>, labels: &[usize]) -> Result<(f64, Array4<f64>)>;
}

/// Anything that can assign a global class id to each image.
pub trait Classifier {
    fn predict(&self, images: &Array4<f64>) -> Result<Vec<usize>>;
}

#[derive(Debug, Clone)]
pub struct Model {
    pub architecture: ArchitectureId,
    pub input_shape: (usize, usize, usize),
    net: Network,
    /// Head column -> global class id, in the order classes were admitted.
    class_cols: Vec<usize>,
}

impl Model {
    /// Fresh model whose head covers exactly `class_ids` (order defines the
    /// column order). All weights come from `rng` in one deterministic
    /// sequence.
    pub fn init(
        architecture: ArchitectureId,
        input_shape: (usize, usize, usize),
        class_ids: &[usize],
        rng: &mut Stream,
    ) -> Result<Self> {
        if class_ids.is_empty() {
            return Err(Error::invalid_argument("model needs at least one class"));
        }
        let mut sorted = class_ids.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != class_ids.len() {
            return Err(Error::invalid_argument("duplicate class ids in head"));
        }
        let (net, _) = arch::build(architecture, input_shape, class_ids.len(), rng)?;
        Ok(Model {
            architecture,
            input_shape,
            net,
            class_cols: class_ids.to_vec(),
        })
    }

    /// Convenience: head over classes `0..n_classes`.
    pub fn init_with_n_classes(
        architecture: ArchitectureId,
        input_shape: (usize, usize, usize),
        n_classes: usize,
        rng: &mut Stream,
    ) -> Result<Self> {
        let ids: Vec<usize> = (0..n_classes).collect();
        Self::init(architecture, input_shape, &ids, rng)
    }

    pub fn class_cols(&self) -> &[usize] {
        &self.class_cols
    }

    pub fn n_classes_seen(&self) -> usize {
        self.class_cols.len()
    }

    /// Head column for a global class id, if the class has been admitted.
    pub fn col_of(&self, class_id: usize) -> Option<usize> {
        self.class_cols.iter().position(|&c| c == class_id)
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn params(&self) -> Vec<&ArrayD<f64>> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        self.net.params_mut()
    }

    #[cfg(test)]
    pub(crate) fn network(&self) -> &Network {
        &self.net
    }

    /// Grows the head with rows for `new_class_ids` (ignoring ids already
    /// present). New rows are Glorot-initialized from `rng`; existing rows
    /// are untouched.
    pub fn expand_head(&mut self, new_class_ids: &[usize], rng: &mut Stream) -> Result<()> {
        let fresh: Vec<usize> = new_class_ids
            .iter()
            .copied()
            .filter(|id| !self.class_cols.contains(id))
            .collect();
        if fresh.is_empty() {
            return Ok(());
        }
        let head = self.net.head();
        let fan_in = head.w.shape()[1];
        let fan_out_total = head.w.shape()[0] + fresh.len();
        let rows = arch::head_rows(fan_in, fan_out_total, fresh.len(), rng);

        let head = self.net.head_mut();
        let old_w = head.w.view().into_dimensionality::<Ix2>().unwrap();
        let new_w = concatenate(
            Axis(0),
            &[old_w, rows.view().into_dimensionality::<Ix2>().unwrap()],
        )
        .unwrap();
        let mut new_b = head.b.clone().into_raw_vec();
        new_b.extend(std::iter::repeat(0.0).take(fresh.len()));
        head.w = new_w.into_dyn();
        head.b = ArrayD::from_shape_vec(ndarray::IxDyn(&[fan_out_total]), new_b).unwrap();
        self.class_cols.extend(fresh);
        Ok(())
    }

    fn check_input(&self, images: &Array4<f64>) -> Result<()> {
        let s = images.shape();
        let (c, h, w) = self.input_shape;
        if s[1] != c || s[2] != h || s[3] != w {
            return Err(Error::invalid_argument(format!(
                "input shape [{},{},{},{}] does not match model input ({c},{h},{w})",
                s[0], s[1], s[2], s[3]
            )));
        }
        if s[0] == 0 {
            return Err(Error::invalid_argument("empty batch"));
        }
        Ok(())
    }

    /// Inference pass.
    pub fn forward(&self, images: &Array4<f64>) -> Result<ForwardOutput> {
        self.check_input(images)?;
        let (_, logits, features) = self.net.forward_trace(images)?;
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericFailure("non-finite logits".to_string()));
        }
        Ok(ForwardOutput { logits, features })
    }

    /// Mean cross-entropy of the batch without any gradients.
    pub fn loss(&self, images: &Array4<f64>, labels: &[usize]) -> Result<f64> {
        let out = self.forward(images)?;
        let (loss, _) = self.ce_and_dlogits(&out.logits, labels)?;
        Ok(loss)
    }

    /// Loss plus parameter and input gradients.
    pub fn loss_and_grads(&self, images: &Array4<f64>, labels: &[usize]) -> Result<LossGrads> {
        self.grads(images, labels, true)
    }

    fn grads(&self, images: &Array4<f64>, labels: &[usize], want_params: bool) -> Result<LossGrads> {
        self.check_input(images)?;
        if labels.len() != images.shape()[0] {
            return Err(Error::invalid_argument(format!(
                "batch has {} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        let (caches, logits, _) = self.net.forward_trace(images)?;
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericFailure("non-finite logits".to_string()));
        }
        let (loss, dlogits) = self.ce_and_dlogits(&logits, labels)?;
        let (input_grads, param_grads) = self.net.backward(&caches, dlogits, want_params)?;
        Ok(LossGrads {
            loss,
            param_grads,
            input_grads,
        })
    }

    /// Softmax cross-entropy (stable log-sum-exp form), averaged over the
    /// batch, with `d(loss)/d(logits)`.
    fn ce_and_dlogits(&self, logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
        let b = logits.shape()[0];
        if labels.len() != b {
            return Err(Error::invalid_argument("label count != batch size"));
        }
        let mut dlogits = Array2::zeros(logits.raw_dim());
        let mut total = 0.0;
        for (i, row) in logits.rows().into_iter().enumerate() {
            let col = self.col_of(labels[i]).ok_or_else(|| {
                Error::invalid_argument(format!(
                    "label {} has no classifier column yet",
                    labels[i]
                ))
            })?;
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[col];
            for (k, &v) in row.iter().enumerate() {
                let p = (v - lse).exp();
                dlogits[[i, k]] = (p - if k == col { 1.0 } else { 0.0 }) / b as f64;
            }
        }
        let loss = total / b as f64;
        if !loss.is_finite() {
            return Err(Error::NumericFailure("non-finite loss".to_string()));
        }
        Ok((loss, dlogits))
    }
}

impl GradientSource for Model {
    fn input_gradients(&self, images: &Array4<f64>, labels: &[usize]) -> Result<(f64, Array4<f64>)> {
        let lg = self.grads(images, labels, false)?;
        Ok((lg.loss, lg.input_grads))
    }
}

impl Classifier for Model {
    /// Argmax over head columns, mapped back to global class ids.
    fn predict(&self, images: &Array4<f64>) -> Result<Vec<usize>> {
        let out = self.forward(images)?;
        Ok(out
            .logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                self.class_cols[best]
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedBlock;
    use ndarray::Array4;

    fn tiny_batch(n: usize, seed: u64) -> (Array4<f64>, Vec<usize>) {
        let mut rng = SeedBlock::stream(seed ^ 0x5a);
        use rand::Rng;
        let images = Array4::from_shape_fn((n, 3, 8, 8), |_| rng.gen_range(0.0..1.0));
        let labels = (0..n).map(|i| i % 3).collect();
        (images, labels)
    }

    #[test]
    fn init_is_deterministic() {
        let mut r1 = SeedBlock::stream(5011);
        let mut r2 = SeedBlock::stream(5011);
        let m1 = Model::init_with_n_classes(ArchitectureId::SmallCnn, (3, 8, 8), 3, &mut r1).unwrap();
        let m2 = Model::init_with_n_classes(ArchitectureId::SmallCnn, (3, 8, 8), 3, &mut r2).unwrap();
        for (a, b) in m1.params().iter().zip(m2.params().iter()) {
            assert_eq!(a.as_slice().unwrap(), b.as_slice().unwrap());
        }
    }

    #[test]
    fn uniform_logits_give_ln_k_loss() {
        // A linear model with zero weights produces identical logits, so the
        // cross-entropy must be ln(n_classes) exactly.
        let mut rng = SeedBlock::stream(1002);
        let mut m = Model::init_with_n_classes(ArchitectureId::Linear, (3, 8, 8), 10, &mut rng).unwrap();
        for p in m.params_mut() {
            p.fill(0.0);
        }
        let (images, _) = tiny_batch(4, 3);
        let labels = vec![0, 3, 7, 9];
        let loss = m.loss(&images, &labels).unwrap();
        assert!((loss - (10.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_gradient_rows_sum_to_zero() {
        let mut rng = SeedBlock::stream(2002);
        let m = Model::init_with_n_classes(ArchitectureId::Mlp, (3, 8, 8), 3, &mut rng).unwrap();
        let (images, labels) = tiny_batch(5, 9);
        let out = m.forward(&images).unwrap();
        let (_, dlogits) = m.ce_and_dlogits(&out.logits, &labels).unwrap();
        for row in dlogits.rows() {
            assert!(row.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn per_sample_outputs_ignore_batch_composition() {
        let mut rng = SeedBlock::stream(7002);
        let m = Model::init_with_n_classes(ArchitectureId::SmallCnn, (3, 8, 8), 3, &mut rng).unwrap();
        let (images, _) = tiny_batch(6, 21);
        let full = m.forward(&images).unwrap();
        let solo = m
            .forward(&images.slice(ndarray::s![2..3, .., .., ..]).to_owned())
            .unwrap();
        for k in 0..3 {
            assert!((full.logits[[2, k]] - solo.logits[[0, k]]).abs() < 1e-12);
        }
    }

    #[test]
    fn expand_head_preserves_old_rows_and_maps_labels() {
        let mut rng = SeedBlock::stream(3002);
        let mut m = Model::init(ArchitectureId::Mlp, (3, 8, 8), &[4, 5], &mut rng).unwrap();
        let before = m.network().head().w.clone();
        m.expand_head(&[8, 9], &mut rng).unwrap();
        assert_eq!(m.class_cols(), &[4, 5, 8, 9]);
        assert_eq!(m.col_of(8), Some(2));
        assert_eq!(m.col_of(0), None);
        let after = &m.network().head().w;
        assert_eq!(after.shape()[0], 4);
        for r in 0..2 {
            for c in 0..before.shape()[1] {
                assert_eq!(after[[r, c]], before[[r, c]]);
            }
        }
    }

    /// Central difference at step `h`, twice (at `h` and `h/2`). The pair
    /// must agree for the probe to be admissible: ReLU and max-pool make the
    /// loss piecewise smooth, and a coordinate whose ±h interval crosses a
    /// kink yields a difference quotient that estimates no derivative at all.
    fn central_pair(
        m: &mut Model,
        images: &Array4<f64>,
        labels: &[usize],
        pi: usize,
        j: usize,
        h: f64,
    ) -> (f64, f64) {
        let mut fd = |hh: f64| {
            let orig = m.params()[pi].as_slice().unwrap()[j];
            m.params_mut()[pi].as_slice_mut().unwrap()[j] = orig + hh;
            let lp = m.loss(images, labels).unwrap();
            m.params_mut()[pi].as_slice_mut().unwrap()[j] = orig - hh;
            let lm = m.loss(images, labels).unwrap();
            m.params_mut()[pi].as_slice_mut().unwrap()[j] = orig;
            (lp - lm) / (2.0 * hh)
        };
        (fd(h), fd(h / 2.0))
    }

    #[test]
    fn finite_difference_agrees_on_every_architecture() {
        // Central differences with h = 1e-3 on a probe of parameters; the
        // analytic gradient must match to better than 1% relative error on
        // every admissible (kink-free) coordinate.
        for archid in [ArchitectureId::Linear, ArchitectureId::Mlp, ArchitectureId::SmallCnn] {
            let mut rng = SeedBlock::stream(31004);
            let mut m = Model::init_with_n_classes(archid, (3, 8, 8), 3, &mut rng).unwrap();
            let (images, labels) = tiny_batch(4, 17);
            let lg = m.loss_and_grads(&images, &labels).unwrap();
            let grads = lg.param_grads.unwrap();

            let h = 1e-3;
            let mut checked = 0usize;
            let mut skipped = 0usize;
            let n_arrays = grads.len();
            for pi in 0..n_arrays {
                let len = grads[pi].len();
                let step = (len / 12).max(1);
                for j in (0..len).step_by(step) {
                    let (numeric, half) = central_pair(&mut m, &images, &labels, pi, j, h);
                    let scale = numeric.abs().max(half.abs()).max(1e-6);
                    if (numeric - half).abs() / scale > 1e-3 {
                        skipped += 1; // kink inside the probe interval
                        continue;
                    }
                    let analytic = grads[pi].as_slice().unwrap()[j];
                    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        (numeric - analytic).abs() / denom < 1e-2,
                        "{archid}: param {pi}[{j}] numeric {numeric} analytic {analytic}"
                    );
                    checked += 1;
                    if checked > 80 {
                        break;
                    }
                }
            }
            assert!(checked >= 10, "{archid}: probe too small ({checked})");
            assert!(
                skipped < checked,
                "{archid}: kink skips outnumber admissible probes ({skipped} vs {checked})"
            );
        }
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let mut rng = SeedBlock::stream(41004);
        let m = Model::init_with_n_classes(ArchitectureId::SmallCnn, (3, 8, 8), 3, &mut rng).unwrap();
        let (mut images, labels) = tiny_batch(2, 23);
        let (_, g) = m.input_gradients(&images, &labels).unwrap();
        let h = 1e-4;
        for &(b, c, y, x) in &[(0usize, 0usize, 3usize, 3usize), (1, 2, 5, 1), (0, 1, 0, 7)] {
            let orig = images[[b, c, y, x]];
            images[[b, c, y, x]] = orig + h;
            let lp = m.loss(&images, &labels).unwrap();
            images[[b, c, y, x]] = orig - h;
            let lm = m.loss(&images, &labels).unwrap();
            images[[b, c, y, x]] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = g[[b, c, y, x]];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!((numeric - analytic).abs() / denom < 1e-2);
        }
    }

    #[test]
    fn linear_model_logits_are_a_plain_matmul() {
        // The linear probe has no normalization: logits = W . flat(x) + b
        // and features are exactly the flattened input.
        let mut rng = SeedBlock::stream(13006);
        let m = Model::init_with_n_classes(ArchitectureId::Linear, (1, 2, 2), 2, &mut rng).unwrap();
        let pixels = [0.1, 0.4, 0.6, 0.9];
        let images = Array4::from_shape_vec((1, 1, 2, 2), pixels.to_vec()).unwrap();
        let out = m.forward(&images).unwrap();
        let w = &m.network().head().w;
        let bvec = &m.network().head().b;
        for k in 0..2 {
            let mut acc = bvec[[k]];
            for (j, pv) in pixels.iter().enumerate() {
                acc += w[[k, j]] * pv;
            }
            assert!((out.logits[[0, k]] - acc).abs() < 1e-12);
        }
        for (f, p) in out.features.iter().zip(pixels.iter()) {
            assert_eq!(f, p);
        }
    }
}
