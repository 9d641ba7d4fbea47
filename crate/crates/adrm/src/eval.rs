//! Evaluation and representation analysis.
//!
//! Accuracy matrices over task streams, corruption and adversarial
//! robustness sweeps, penultimate-feature extraction, and linear CKA between
//! models. Everything here is pure over frozen models; sweeps fan out with
//! rayon because each cell derives its own RNG seed and cannot observe
//! execution order.

use crate::attack::{perturb, AttackKind, AttackSpec};
use crate::data::{corrupt, CorruptionKind, CorruptionSpec};
use crate::data::DatasetHandle;
use crate::model::{Classifier, Model};
use crate::rng::{splitmix64, SeedBlock};
use crate::{Error, Result};
use ndarray::{Array2, Array4, Axis};
use rayon::prelude::*;
use std::io::Write as _;
use std::path::Path;

/// Forward batch size used by all evaluation loops.
const EVAL_BATCH: usize = 256;

/// Lower-triangular task-accuracy record: `R[t][i]` is the accuracy on task
/// `i`'s test set after finishing task `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        AccuracyMatrix { rows: Vec::new() }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = AccuracyMatrix { rows };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (t, row) in self.rows.iter().enumerate() {
            if row.len() != t + 1 {
                return Err(Error::invalid_argument(format!(
                    "row {t} has {} entries, expected {}",
                    row.len(),
                    t + 1
                )));
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid_argument(format!(
                    "row {t} holds an accuracy outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::invalid_argument(format!(
                "expected row of length {}, got {}",
                self.rows.len() + 1,
                row.len()
            )));
        }
        if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid_argument("accuracy outside [0, 1]"));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn n_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.rows.get(t).and_then(|r| r.get(i)).copied()
    }

    /// Average classification accuracy: the mean of the final row.
    pub fn aca(&self) -> Result<f64> {
        let t = self.rows.len();
        if t == 0 {
            return Err(Error::invalid_argument("empty accuracy matrix"));
        }
        let last = &self.rows[t - 1];
        if last.len() != t {
            return Err(Error::invalid_argument("final row incomplete"));
        }
        Ok(last.iter().sum::<f64>() / t as f64)
    }

    /// CSV layout: header `task,r0..r{T-1}`, one row per task, cells above
    /// the diagonal left empty. Float formatting is shortest-roundtrip, so
    /// identical matrices serialize to identical bytes.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let t = self.rows.len();
        let mut out = String::new();
        out.push_str("task");
        for i in 0..t {
            out.push_str(&format!(",r{i}"));
        }
        out.push('\n');
        for (ti, row) in self.rows.iter().enumerate() {
            out.push_str(&ti.to_string());
            for i in 0..t {
                out.push(',');
                if i < row.len() {
                    out.push_str(&format!("{}", row[i]));
                }
            }
            out.push('\n');
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if ln == 0 {
                if !line.starts_with("task,") && line != "task" {
                    return Err(Error::BadArtifact {
                        path: path.display().to_string(),
                        message: "missing accuracy matrix header".to_string(),
                    });
                }
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            let row: Vec<f64> = cells[1..]
                .iter()
                .take_while(|c| !c.is_empty())
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::BadArtifact {
                    path: path.display().to_string(),
                    message: format!("line {}: {e}", ln + 1),
                })?;
            rows.push(row);
        }
        Self::from_rows(rows).map_err(|e| Error::BadArtifact {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

impl Default for AccuracyMatrix {
    fn default() -> Self {
        Self::new()
    }
}

/// Plain top-1 accuracy of `model` on a labelled set, batched.
pub fn accuracy(model: &Model, images: &Array4<f64>, labels: &[usize]) -> Result<f64> {
    let n = images.shape()[0];
    if n == 0 || labels.len() != n {
        return Err(Error::invalid_argument("empty or mismatched evaluation set"));
    }
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let batch = images.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        let preds = model.predict(&batch)?;
        correct += preds
            .iter()
            .zip(&labels[start..end])
            .filter(|(p, l)| p == l)
            .count();
        start = end;
    }
    Ok(correct as f64 / n as f64)
}

pub fn accuracy_on(model: &Model, handle: &DatasetHandle) -> Result<f64> {
    accuracy(model, &handle.images, &handle.labels)
}

/// One cell of a corruption sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CorruptionCell {
    pub model_id: String,
    pub kind: CorruptionKind,
    pub severity: u8,
    pub accuracy: f64,
    pub n: usize,
}

/// Accuracy per (kind, severity) on corrupted copies of the test set.
/// Severity 0 is the identity, so those cells equal clean accuracy exactly.
pub fn corruption_sweep(
    model: &Model,
    model_id: &str,
    images: &Array4<f64>,
    labels: &[usize],
    kinds: &[CorruptionKind],
    severities: &[u8],
    seed: u64,
) -> Result<Vec<CorruptionCell>> {
    let cells: Vec<(usize, CorruptionKind, u8)> = kinds
        .iter()
        .enumerate()
        .flat_map(|(ki, &k)| severities.iter().map(move |&s| (ki, k, s)))
        .collect();
    let mut results: Vec<(usize, CorruptionCell)> = cells
        .par_iter()
        .enumerate()
        .map(|(order, &(ki, kind, severity))| -> Result<(usize, CorruptionCell)> {
            let spec = CorruptionSpec::new(kind, severity)?;
            let cell_seed = splitmix64(seed ^ splitmix64((ki as u64) << 8 | severity as u64));
            let corrupted = corrupt(images, &spec, cell_seed)?;
            let acc = accuracy(model, &corrupted, labels)?;
            Ok((
                order,
                CorruptionCell {
                    model_id: model_id.to_string(),
                    kind,
                    severity,
                    accuracy: acc,
                    n: labels.len(),
                },
            ))
        })
        .collect::<Result<_>>()?;
    results.sort_by_key(|(order, _)| *order);
    Ok(results.into_iter().map(|(_, c)| c).collect())
}

/// One cell of an adversarial sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AdversarialCell {
    pub model_id: String,
    pub attack: AttackKind,
    pub epsilon: f64,
    pub accuracy: f64,
    pub n: usize,
}

/// Accuracy under each (attack, epsilon) pair. `epsilon = 0` cells equal
/// clean accuracy: a zero-radius ball admits no movement.
pub fn adversarial_sweep(
    model: &Model,
    model_id: &str,
    images: &Array4<f64>,
    labels: &[usize],
    attacks: &[AttackKind],
    epsilons: &[f64],
    seed: u64,
) -> Result<Vec<AdversarialCell>> {
    let cells: Vec<(usize, AttackKind, usize)> = attacks
        .iter()
        .enumerate()
        .flat_map(|(ai, &a)| (0..epsilons.len()).map(move |ei| (ai, a, ei)))
        .collect();
    let mut results: Vec<(usize, AdversarialCell)> = cells
        .par_iter()
        .enumerate()
        .map(|(order, &(ai, attack, ei))| -> Result<(usize, AdversarialCell)> {
            let epsilon = epsilons[ei];
            let spec = match attack {
                AttackKind::Fgsm => AttackSpec::fgsm(epsilon),
                AttackKind::PgdLinf => AttackSpec::pgd_linf(epsilon),
                AttackKind::PgdL2 => AttackSpec::pgd_l2(epsilon),
            };
            let cell_seed = splitmix64(seed ^ splitmix64((ai as u64) << 16 | ei as u64));
            let mut rng = SeedBlock::stream(cell_seed);
            let n = labels.len();
            let mut correct = 0usize;
            let mut start = 0;
            while start < n {
                let end = (start + EVAL_BATCH).min(n);
                let batch = images.slice(ndarray::s![start..end, .., .., ..]).to_owned();
                let adv = perturb(model, &batch, &labels[start..end], &spec, &mut rng)?;
                let preds = model.predict(&adv)?;
                correct += preds
                    .iter()
                    .zip(&labels[start..end])
                    .filter(|(p, l)| p == l)
                    .count();
                start = end;
            }
            Ok((
                order,
                AdversarialCell {
                    model_id: model_id.to_string(),
                    attack,
                    epsilon,
                    accuracy: correct as f64 / n as f64,
                    n,
                },
            ))
        })
        .collect::<Result<_>>()?;
    results.sort_by_key(|(order, _)| *order);
    Ok(results.into_iter().map(|(_, c)| c).collect())
}

pub const CORRUPTION_HEADER: &str = "model_id,kind,severity,accuracy,n";
pub const ADVERSARIAL_HEADER: &str = "model_id,attack,epsilon,accuracy,n";

pub fn write_corruption_csv(cells: &[CorruptionCell], path: &Path) -> Result<()> {
    let mut out = format!("{CORRUPTION_HEADER}\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.model_id, c.kind, c.severity, c.accuracy, c.n
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_adversarial_csv(cells: &[AdversarialCell], path: &Path) -> Result<()> {
    let mut out = format!("{ADVERSARIAL_HEADER}\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.model_id, c.attack, c.epsilon, c.accuracy, c.n
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Penultimate-layer activations for a fixed example set.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    /// `[N, F]`
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub model_id: String,
    pub layer_id: String,
}

impl FeatureMatrix {
    pub fn n(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }
}

/// Extracts penultimate features, batched and deterministic.
pub fn extract_features(
    model: &Model,
    model_id: &str,
    images: &Array4<f64>,
    labels: &[usize],
) -> Result<FeatureMatrix> {
    let n = images.shape()[0];
    if n == 0 || labels.len() != n {
        return Err(Error::invalid_argument("empty or mismatched feature set"));
    }
    let mut rows: Vec<Array2<f64>> = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let batch = images.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        let out = model.forward(&batch)?;
        rows.push(out.features);
        start = end;
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let features = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| Error::NumericFailure(e.to_string()))?;
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("non-finite features".to_string()));
    }
    Ok(FeatureMatrix {
        features,
        labels: labels.to_vec(),
        model_id: model_id.to_string(),
        layer_id: "penultimate".to_string(),
    })
}

/// A fixed, seeded evaluation subset shared by every model in a comparison:
/// indices drawn without replacement from the handle.
pub fn eval_subset(
    handle: &DatasetHandle,
    n: usize,
    seed: u64,
) -> Result<(Array4<f64>, Vec<usize>)> {
    let total = handle.len();
    if total == 0 {
        return Err(Error::invalid_argument("empty dataset"));
    }
    let take = n.min(total);
    let mut rng = SeedBlock::stream(seed);
    let mut idx: Vec<usize> = (0..total).collect();
    use rand::Rng;
    for i in 0..take {
        let j = rng.gen_range(i..total);
        idx.swap(i, j);
    }
    idx.truncate(take);
    Ok(handle.gather(&idx))
}

/// Linear CKA between two feature matrices on the same examples:
/// `tr(Kx Ky) / (||Kx||_F ||Ky||_F)` over column-centered features, computed
/// in the equivalent `F x F` cross-covariance form
/// `||Xc^T Yc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F)`.
pub fn linear_cka(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    let n = x.shape()[0];
    if n < 2 {
        return Err(Error::invalid_argument(
            "cka needs at least two paired examples",
        ));
    }
    if y.shape()[0] != n {
        return Err(Error::invalid_argument(
            "cka inputs must pair the same examples",
        ));
    }
    let xc = center_columns(x);
    let yc = center_columns(y);
    // Constant features center to (numerically) nothing and make the score
    // 0/0; detect them relative to the raw magnitude, since exact zeros only
    // appear when the constant is representable.
    if effectively_zero(&xc, x) || effectively_zero(&yc, y) {
        return Err(Error::UndefinedSimilarity(
            "zero-variance features".to_string(),
        ));
    }
    let xx = xc.t().dot(&xc);
    let yy = yc.t().dot(&yc);
    let denom_x = frobenius(&xx);
    let denom_y = frobenius(&yy);
    if denom_x == 0.0 || denom_y == 0.0 {
        return Err(Error::UndefinedSimilarity(
            "zero-variance features: centered norm is 0".to_string(),
        ));
    }
    let xy = xc.t().dot(&yc);
    let num = xy.iter().map(|v| v * v).sum::<f64>();
    Ok(num / (denom_x * denom_y))
}

fn center_columns(a: &Array2<f64>) -> Array2<f64> {
    let mut c = a.clone();
    let n = a.shape()[0] as f64;
    for mut col in c.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
    }
    c
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn effectively_zero(centered: &Array2<f64>, raw: &Array2<f64>) -> bool {
    frobenius(centered) <= 1e-12 * frobenius(raw).max(1.0)
}

/// Pairwise CKA across models.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub scores: Array2<f64>,
    pub model_ids: Vec<String>,
}

impl SimilarityMatrix {
    pub fn validate(&self) -> Result<()> {
        let m = self.model_ids.len();
        if self.scores.shape() != [m, m] {
            return Err(Error::invalid_argument("similarity matrix shape mismatch"));
        }
        for i in 0..m {
            if (self.scores[[i, i]] - 1.0).abs() > 1e-6 {
                return Err(Error::invalid_argument(format!(
                    "diagonal entry {i} is {} (expected 1)",
                    self.scores[[i, i]]
                )));
            }
            for j in 0..m {
                let v = self.scores[[i, j]];
                if !(0.0..=1.0 + 1e-6).contains(&v) {
                    return Err(Error::invalid_argument(format!(
                        "cka score out of range at ({i},{j}): {v}"
                    )));
                }
                if (v - self.scores[[j, i]]).abs() > 1e-6 {
                    return Err(Error::invalid_argument("similarity matrix not symmetric"));
                }
            }
        }
        Ok(())
    }

    /// Square CSV with model ids as both header row and first column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let m = self.model_ids.len();
        let mut out = String::from("model_id");
        for id in &self.model_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for i in 0..m {
            out.push_str(&self.model_ids[i]);
            for j in 0..m {
                out.push_str(&format!(",{}", self.scores[[i, j]]));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Builds the pairwise CKA matrix over feature exports. All matrices must
/// pair the same examples (equal N).
pub fn cka_matrix(features: &[FeatureMatrix]) -> Result<SimilarityMatrix> {
    if features.is_empty() {
        return Err(Error::invalid_argument("no feature matrices"));
    }
    let m = features.len();
    let mut scores = Array2::zeros((m, m));
    for i in 0..m {
        for j in i..m {
            let v = linear_cka(&features[i].features, &features[j].features)?;
            scores[[i, j]] = v;
            scores[[j, i]] = v;
        }
    }
    let sim = SimilarityMatrix {
        scores,
        model_ids: features.iter().map(|f| f.model_id.clone()).collect(),
    };
    sim.validate()?;
    Ok(sim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchitectureId;
    use crate::rng::SeedBlock;
    use rand::Rng;

    #[test]
    fn aca_is_the_final_row_mean() {
        let m = AccuracyMatrix::from_rows(vec![vec![0.948]]).unwrap();
        assert!((m.aca().unwrap() - 0.948).abs() < 1e-15);

        let m = AccuracyMatrix::from_rows(vec![
            vec![0.9],
            vec![0.5, 0.8],
            vec![0.2, 0.4, 0.9],
        ])
        .unwrap();
        assert!((m.aca().unwrap() - 0.5).abs() < 1e-15);

        let zeros = AccuracyMatrix::from_rows(vec![vec![0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(zeros.aca().unwrap(), 0.0);
    }

    #[test]
    fn non_triangular_rows_are_rejected() {
        assert!(AccuracyMatrix::from_rows(vec![vec![0.5, 0.5]]).is_err());
        assert!(AccuracyMatrix::from_rows(vec![vec![0.5], vec![0.5]]).is_err());
        assert!(AccuracyMatrix::from_rows(vec![vec![1.5]]).is_err());
        let mut m = AccuracyMatrix::new();
        m.push_row(vec![0.5]).unwrap();
        assert!(m.push_row(vec![0.5]).is_err());
        assert!(m.aca().is_ok());
    }

    #[test]
    fn matrix_csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = AccuracyMatrix::from_rows(vec![
            vec![0.9375],
            vec![0.11111111111111111, 0.7],
        ])
        .unwrap();
        m.write_csv(&path).unwrap();
        let back = AccuracyMatrix::read_csv(&path).unwrap();
        assert_eq!(m, back);
        // Writing again produces identical bytes.
        let bytes1 = std::fs::read(&path).unwrap();
        m.write_csv(&path).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    fn random_features(n: usize, f: usize, seed: u64) -> Array2<f64> {
        let mut rng = SeedBlock::stream(seed);
        Array2::from_shape_fn((n, f), |_| {
            use rand_distr::{Distribution, StandardNormal};
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        })
    }

    /// Random orthogonal matrix via Gram-Schmidt on a Gaussian draw.
    fn random_orthogonal(f: usize, seed: u64) -> Array2<f64> {
        let a = random_features(f, f, seed);
        let mut q = Array2::<f64>::zeros((f, f));
        for j in 0..f {
            let mut v: Vec<f64> = a.column(j).to_vec();
            for k in 0..j {
                let dot: f64 = (0..f).map(|i| q[[i, k]] * a[[i, j]]).sum();
                for i in 0..f {
                    v[i] -= dot * q[[i, k]];
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for i in 0..f {
                q[[i, j]] = v[i] / norm;
            }
        }
        q
    }

    #[test]
    fn cka_self_similarity_is_one() {
        let x = random_features(40, 8, 100);
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cka_is_invariant_to_rotation_and_isotropic_scale() {
        let x = random_features(40, 8, 101);
        let q = random_orthogonal(8, 102);
        // Verify q is orthogonal before relying on it.
        let qtq = q.t().dot(&q);
        for i in 0..8 {
            for j in 0..8 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[[i, j]] - expect).abs() < 1e-10);
            }
        }
        let rotated = x.dot(&q);
        assert!((linear_cka(&x, &rotated).unwrap() - 1.0).abs() < 1e-6);
        let scaled = x.mapv(|v| v * 3.7);
        assert!((linear_cka(&x, &scaled).unwrap() - 1.0).abs() < 1e-6);
        let neg = x.mapv(|v| v * -0.4);
        assert!((linear_cka(&x, &neg).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cka_is_symmetric_and_bounded() {
        let x = random_features(30, 6, 103);
        let y = random_features(30, 9, 104);
        let xy = linear_cka(&x, &y).unwrap();
        let yx = linear_cka(&y, &x).unwrap();
        assert!((xy - yx).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&xy));
    }

    #[test]
    fn independent_gaussians_score_low() {
        // 100 seeded pairs of independent 50x8 standard-normal matrices; the
        // empirical max stays below 0.35.
        let mut max = 0.0f64;
        for seed in 0..100u64 {
            let x = random_features(50, 8, 1000 + 2 * seed);
            let y = random_features(50, 8, 1001 + 2 * seed);
            let v = linear_cka(&x, &y).unwrap();
            max = max.max(v);
        }
        assert!(max < 0.35, "empirical max {max}");
    }

    #[test]
    fn constant_features_are_undefined() {
        let x = Array2::from_elem((10, 4), 0.7);
        let y = random_features(10, 4, 105);
        assert!(matches!(
            linear_cka(&x, &y),
            Err(Error::UndefinedSimilarity(_))
        ));
    }

    #[test]
    fn mismatched_example_counts_are_rejected() {
        let x = random_features(10, 4, 106);
        let y = random_features(12, 4, 107);
        assert!(linear_cka(&x, &y).is_err());
        let one = random_features(1, 4, 108);
        assert!(linear_cka(&one, &one).is_err());
    }

    #[test]
    fn feature_extraction_matches_forward_and_is_deterministic() {
        let mut rng = SeedBlock::stream(2001);
        let model =
            Model::init_with_n_classes(ArchitectureId::SmallCnn, (3, 8, 8), 4, &mut rng).unwrap();
        let images = Array4::from_shape_fn((7, 3, 8, 8), |_| rng.gen_range(0.0..1.0));
        let labels: Vec<usize> = (0..7).map(|i| i % 4).collect();
        let f1 = extract_features(&model, "m", &images, &labels).unwrap();
        let f2 = extract_features(&model, "m", &images, &labels).unwrap();
        assert_eq!(f1.features, f2.features);
        assert_eq!(f1.dim(), 32 * 2 * 2);

        // Duplicated inputs give duplicated rows.
        let mut dup = images.clone();
        dup.index_axis_mut(Axis(0), 1)
            .assign(&images.index_axis(Axis(0), 0));
        let fd = extract_features(&model, "m", &dup, &labels).unwrap();
        for j in 0..fd.dim() {
            assert_eq!(fd.features[[0, j]], fd.features[[1, j]]);
        }
    }

    #[test]
    fn linear_model_features_are_the_flattened_input() {
        let mut rng = SeedBlock::stream(2002);
        let model =
            Model::init_with_n_classes(ArchitectureId::Linear, (1, 2, 2), 2, &mut rng).unwrap();
        let images = Array4::from_shape_vec((1, 1, 2, 2), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let f = extract_features(&model, "lin", &images, &[0]).unwrap();
        assert_eq!(f.features.as_slice().unwrap(), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn untrained_model_sits_at_chance_under_corruption() {
        // 10-way random model over >=1000 examples: every sweep cell lands
        // within ±0.03 of 0.1.
        let mut rng = SeedBlock::stream(2003);
        let model =
            Model::init_with_n_classes(ArchitectureId::SmallCnn, (3, 8, 8), 10, &mut rng).unwrap();
        let images = Array4::from_shape_fn((1000, 3, 8, 8), |_| rng.gen_range(0.0..1.0));
        let labels: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..10)).collect();
        let cells = corruption_sweep(
            &model,
            "untrained",
            &images,
            &labels,
            &[CorruptionKind::GaussianNoise, CorruptionKind::Pixelate],
            &[0, 3],
            7,
        )
        .unwrap();
        assert_eq!(cells.len(), 4);
        for c in &cells {
            assert!((c.accuracy - 0.1).abs() <= 0.03, "{:?}", c);
        }
    }

    #[test]
    fn severity_zero_equals_clean_accuracy_exactly() {
        let mut rng = SeedBlock::stream(2004);
        let model =
            Model::init_with_n_classes(ArchitectureId::SmallCnn, (3, 8, 8), 4, &mut rng).unwrap();
        let images = Array4::from_shape_fn((64, 3, 8, 8), |_| rng.gen_range(0.0..1.0));
        let labels: Vec<usize> = (0..64).map(|i| i % 4).collect();
        let clean = accuracy(&model, &images, &labels).unwrap();
        let cells = corruption_sweep(
            &model,
            "m",
            &images,
            &labels,
            &crate::data::ALL_CORRUPTION_KINDS,
            &[0],
            9,
        )
        .unwrap();
        for c in &cells {
            assert_eq!(c.accuracy, clean, "{}", c.kind);
        }
    }

    #[test]
    fn zero_epsilon_attack_equals_clean_accuracy() {
        let mut rng = SeedBlock::stream(2005);
        let model =
            Model::init_with_n_classes(ArchitectureId::SmallCnn, (3, 8, 8), 4, &mut rng).unwrap();
        let images = Array4::from_shape_fn((48, 3, 8, 8), |_| rng.gen_range(0.0..1.0));
        let labels: Vec<usize> = (0..48).map(|i| i % 4).collect();
        let clean = accuracy(&model, &images, &labels).unwrap();
        let cells = adversarial_sweep(
            &model,
            "m",
            &images,
            &labels,
            &[AttackKind::Fgsm, AttackKind::PgdLinf, AttackKind::PgdL2],
            &[0.0],
            11,
        )
        .unwrap();
        for c in &cells {
            assert_eq!(c.accuracy, clean, "{}", c.attack);
        }
    }

    #[test]
    fn sweep_grids_have_product_cardinality() {
        let mut rng = SeedBlock::stream(2006);
        let model =
            Model::init_with_n_classes(ArchitectureId::Linear, (1, 4, 4), 2, &mut rng).unwrap();
        let images = Array4::from_shape_fn((20, 1, 4, 4), |_| rng.gen_range(0.0..1.0));
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let eps = [0.0, 2.0 / 255.0, 4.0 / 255.0, 8.0 / 255.0, 16.0 / 255.0];
        let cells = adversarial_sweep(
            &model,
            "m",
            &images,
            &labels,
            &[AttackKind::Fgsm, AttackKind::PgdLinf, AttackKind::PgdL2],
            &eps,
            13,
        )
        .unwrap();
        assert_eq!(cells.len(), 15);
    }

    #[test]
    fn cka_matrix_of_a_model_with_itself_is_unit() {
        let x = random_features(30, 6, 109);
        let fm = FeatureMatrix {
            features: x,
            labels: vec![0; 30],
            model_id: "a".to_string(),
            layer_id: "penultimate".to_string(),
        };
        let sim = cka_matrix(&[fm.clone(), fm]).unwrap();
        assert_eq!(sim.scores.shape(), &[2, 2]);
        for v in sim.scores.iter() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_subset_is_shared_and_seeded() {
        use crate::data::{DatasetHandle, Split};
        let mut rng = SeedBlock::stream(2007);
        let images = Array4::from_shape_fn((50, 1, 4, 4), |_| rng.gen_range(0.0..1.0));
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let handle = DatasetHandle {
            name: "toy".to_string(),
            split: Split::Test,
            images,
            labels,
            n_classes: 5,
        };
        let (a_img, a_lab) = eval_subset(&handle, 20, 99).unwrap();
        let (b_img, b_lab) = eval_subset(&handle, 20, 99).unwrap();
        assert_eq!(a_img, b_img);
        assert_eq!(a_lab, b_lab);
        let (c_img, _) = eval_subset(&handle, 20, 100).unwrap();
        assert_ne!(a_img, c_img);
        // Requesting more than available returns everything.
        let (d_img, _) = eval_subset(&handle, 500, 99).unwrap();
        assert_eq!(d_img.shape()[0], 50);
    }
}
