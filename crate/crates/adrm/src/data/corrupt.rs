//! Algorithmically generated image corruptions at graded severities.
//!
//! Ten corruption kinds, each with five severity levels; severity 0 is the
//! identity. Per-kind severity parameters are the `PARAMS_*` tables below and
//! are part of the config schema documentation. Stochastic kinds (noise, fog)
//! are deterministic given the seed; the rest ignore it.

use crate::data::shape4;
use crate::{Error, Result};
use ndarray::{Array2, Array4};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Gaussian noise sigma per severity.
pub const PARAMS_GAUSSIAN_SIGMA: [f64; 5] = [0.04, 0.08, 0.13, 0.19, 0.26];
/// Shot-noise photon budget per severity (lower is noisier).
pub const PARAMS_SHOT_PHOTONS: [f64; 5] = [400.0, 150.0, 60.0, 25.0, 10.0];
/// Impulse (salt & pepper) pixel fraction per severity.
pub const PARAMS_IMPULSE_FRACTION: [f64; 5] = [0.02, 0.05, 0.09, 0.14, 0.20];
/// Defocus disk radius in pixels per severity.
pub const PARAMS_DEFOCUS_RADIUS: [usize; 5] = [1, 2, 3, 4, 5];
/// Motion-blur kernel length (diagonal) per severity.
pub const PARAMS_MOTION_LENGTH: [usize; 5] = [3, 5, 7, 9, 11];
/// Additive brightness shift per severity.
pub const PARAMS_BRIGHTNESS_SHIFT: [f64; 5] = [0.10, 0.18, 0.26, 0.34, 0.42];
/// Contrast scale toward the per-image mean per severity.
pub const PARAMS_CONTRAST_SCALE: [f64; 5] = [0.75, 0.55, 0.40, 0.27, 0.15];
/// Fog blend weight per severity.
pub const PARAMS_FOG_BLEND: [f64; 5] = [0.15, 0.28, 0.42, 0.55, 0.70];
/// Pixelation block size per severity.
pub const PARAMS_PIXELATE_BLOCK: [usize; 5] = [2, 3, 4, 6, 8];
/// DCT quantization step per severity.
pub const PARAMS_JPEG_QUANT: [f64; 5] = [0.02, 0.05, 0.09, 0.16, 0.28];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    MotionBlur,
    Brightness,
    Contrast,
    Fog,
    Pixelate,
    JpegBlocking,
}

pub const ALL_CORRUPTION_KINDS: [CorruptionKind; 10] = [
    CorruptionKind::GaussianNoise,
    CorruptionKind::ShotNoise,
    CorruptionKind::ImpulseNoise,
    CorruptionKind::DefocusBlur,
    CorruptionKind::MotionBlur,
    CorruptionKind::Brightness,
    CorruptionKind::Contrast,
    CorruptionKind::Fog,
    CorruptionKind::Pixelate,
    CorruptionKind::JpegBlocking,
];

impl CorruptionKind {
    pub fn name(&self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian-noise",
            CorruptionKind::ShotNoise => "shot-noise",
            CorruptionKind::ImpulseNoise => "impulse-noise",
            CorruptionKind::DefocusBlur => "defocus-blur",
            CorruptionKind::MotionBlur => "motion-blur",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Fog => "fog",
            CorruptionKind::Pixelate => "pixelate",
            CorruptionKind::JpegBlocking => "jpeg-blocking",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_CORRUPTION_KINDS
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| Error::UnsupportedCorruption(s.to_string()))
    }
}

/// A corruption kind at a severity in `[0,5]`; severity 0 is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if severity > 5 {
            return Err(Error::invalid_argument(format!(
                "severity must be in [0,5], got {severity}"
            )));
        }
        Ok(CorruptionSpec { kind, severity })
    }
}

/// Apply a corruption to a batch. Shape is preserved and output stays in
/// `[0,1]`; severity 0 returns the input unchanged.
pub fn corrupt(images: &Array4<f64>, spec: &CorruptionSpec, seed: u64) -> Result<Array4<f64>> {
    if spec.severity > 5 {
        return Err(Error::invalid_argument(format!(
            "severity must be in [0,5], got {}",
            spec.severity
        )));
    }
    if images.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_argument("corrupting non-finite input"));
    }
    if spec.severity == 0 {
        return Ok(images.clone());
    }
    let level = (spec.severity - 1) as usize;
    let mut rng = crate::rng::SeedBlock::stream(seed);
    let (b, c, h, w) = shape4(images);
    let mut out = images.clone();

    match spec.kind {
        CorruptionKind::GaussianNoise => {
            let normal = Normal::new(0.0, PARAMS_GAUSSIAN_SIGMA[level]).unwrap();
            for v in out.iter_mut() {
                *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        CorruptionKind::ShotNoise => {
            let photons = PARAMS_SHOT_PHOTONS[level];
            for v in out.iter_mut() {
                let lambda = (*v * photons).max(1e-9);
                let sample = Poisson::new(lambda).unwrap().sample(&mut rng);
                *v = (sample / photons).clamp(0.0, 1.0);
            }
        }
        CorruptionKind::ImpulseNoise => {
            let frac = PARAMS_IMPULSE_FRACTION[level];
            for i in 0..b {
                for y in 0..h {
                    for x in 0..w {
                        if rng.gen::<f64>() < frac {
                            let value = if rng.gen::<bool>() { 1.0 } else { 0.0 };
                            for ch in 0..c {
                                out[[i, ch, y, x]] = value;
                            }
                        }
                    }
                }
            }
        }
        CorruptionKind::DefocusBlur => {
            let r = PARAMS_DEFOCUS_RADIUS[level] as isize;
            let mut offsets = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    if dy * dy + dx * dx <= r * r {
                        offsets.push((dy, dx));
                    }
                }
            }
            convolve_offsets(&mut out, images, &offsets);
        }
        CorruptionKind::MotionBlur => {
            let len = PARAMS_MOTION_LENGTH[level] as isize;
            let half = len / 2;
            let offsets: Vec<(isize, isize)> = (-half..=half).map(|k| (k, k)).collect();
            convolve_offsets(&mut out, images, &offsets);
        }
        CorruptionKind::Brightness => {
            let shift = PARAMS_BRIGHTNESS_SHIFT[level];
            for v in out.iter_mut() {
                *v = (*v + shift).clamp(0.0, 1.0);
            }
        }
        CorruptionKind::Contrast => {
            let scale = PARAMS_CONTRAST_SCALE[level];
            for i in 0..b {
                let mut mean = 0.0;
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            mean += images[[i, ch, y, x]];
                        }
                    }
                }
                mean /= (c * h * w) as f64;
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            out[[i, ch, y, x]] =
                                ((images[[i, ch, y, x]] - mean) * scale + mean).clamp(0.0, 1.0);
                        }
                    }
                }
            }
        }
        CorruptionKind::Fog => {
            let t = PARAMS_FOG_BLEND[level];
            const GRID: usize = 4;
            for i in 0..b {
                // Smooth haze field: a coarse random grid, bilinearly upsampled.
                let mut grid = Array2::zeros((GRID + 1, GRID + 1));
                for gy in 0..=GRID {
                    for gx in 0..=GRID {
                        grid[[gy, gx]] = rng.gen_range(0.6..1.0);
                    }
                }
                for y in 0..h {
                    for x in 0..w {
                        let fy = y as f64 / h as f64 * GRID as f64;
                        let fx = x as f64 / w as f64 * GRID as f64;
                        let (y0, x0) = (fy as usize, fx as usize);
                        let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
                        let haze = grid[[y0, x0]] * (1.0 - dy) * (1.0 - dx)
                            + grid[[y0 + 1, x0]] * dy * (1.0 - dx)
                            + grid[[y0, x0 + 1]] * (1.0 - dy) * dx
                            + grid[[y0 + 1, x0 + 1]] * dy * dx;
                        for ch in 0..c {
                            out[[i, ch, y, x]] = ((1.0 - t) * images[[i, ch, y, x]] + t * haze)
                                .clamp(0.0, 1.0);
                        }
                    }
                }
            }
        }
        CorruptionKind::Pixelate => {
            let block = PARAMS_PIXELATE_BLOCK[level];
            for i in 0..b {
                for ch in 0..c {
                    for by in (0..h).step_by(block) {
                        for bx in (0..w).step_by(block) {
                            let y_end = (by + block).min(h);
                            let x_end = (bx + block).min(w);
                            let mut mean = 0.0;
                            for y in by..y_end {
                                for x in bx..x_end {
                                    mean += images[[i, ch, y, x]];
                                }
                            }
                            mean /= ((y_end - by) * (x_end - bx)) as f64;
                            for y in by..y_end {
                                for x in bx..x_end {
                                    out[[i, ch, y, x]] = mean;
                                }
                            }
                        }
                    }
                }
            }
        }
        CorruptionKind::JpegBlocking => {
            let quant = PARAMS_JPEG_QUANT[level];
            for i in 0..b {
                for ch in 0..c {
                    for by in (0..h).step_by(8) {
                        for bx in (0..w).step_by(8) {
                            let bh = (by + 8).min(h) - by;
                            let bw = (bx + 8).min(w) - bx;
                            let mut block = Array2::zeros((bh, bw));
                            for y in 0..bh {
                                for x in 0..bw {
                                    block[[y, x]] = images[[i, ch, by + y, bx + x]];
                                }
                            }
                            let coeffs = dct2(&block);
                            let quantized = coeffs.mapv(|v| (v / quant).round() * quant);
                            let restored = idct2(&quantized);
                            for y in 0..bh {
                                for x in 0..bw {
                                    out[[i, ch, by + y, bx + x]] =
                                        restored[[y, x]].clamp(0.0, 1.0);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Mean kernel over clamped-to-edge pixel offsets.
fn convolve_offsets(out: &mut Array4<f64>, input: &Array4<f64>, offsets: &[(isize, isize)]) {
    let (b, c, h, w) = shape4(input);
    let norm = offsets.len() as f64;
    for i in 0..b {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for &(dy, dx) in offsets {
                        let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        acc += input[[i, ch, sy, sx]];
                    }
                    out[[i, ch, y, x]] = (acc / norm).clamp(0.0, 1.0);
                }
            }
        }
    }
}

/// Orthonormal 2-D DCT-II.
fn dct2(block: &Array2<f64>) -> Array2<f64> {
    let (m, n) = block.dim();
    let mut out = Array2::zeros((m, n));
    for u in 0..m {
        for v in 0..n {
            let mut acc = 0.0;
            for y in 0..m {
                for x in 0..n {
                    acc += block[[y, x]]
                        * (std::f64::consts::PI * (y as f64 + 0.5) * u as f64 / m as f64).cos()
                        * (std::f64::consts::PI * (x as f64 + 0.5) * v as f64 / n as f64).cos();
                }
            }
            let cu = if u == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
            let cv = if v == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            out[[u, v]] = cu * cv * acc;
        }
    }
    out
}

fn idct2(coeffs: &Array2<f64>) -> Array2<f64> {
    let (m, n) = coeffs.dim();
    let mut out = Array2::zeros((m, n));
    for y in 0..m {
        for x in 0..n {
            let mut acc = 0.0;
            for u in 0..m {
                for v in 0..n {
                    let cu = if u == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
                    let cv = if v == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                    acc += cu
                        * cv
                        * coeffs[[u, v]]
                        * (std::f64::consts::PI * (y as f64 + 0.5) * u as f64 / m as f64).cos()
                        * (std::f64::consts::PI * (x as f64 + 0.5) * v as f64 / n as f64).cos();
                }
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Export one corrupted copy of `images` per (kind, severity) pair as NPY
/// files with a JSON sidecar manifest carrying kind, severity, seed and a
/// SHA-256 checksum of the array file.
pub fn export_corrupted_set(
    images: &Array4<f64>,
    kinds: &[CorruptionKind],
    severities: &[u8],
    seed: u64,
    out_dir: &std::path::Path,
) -> Result<Vec<std::path::PathBuf>> {
    use sha2::{Digest, Sha256};
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for &kind in kinds {
        for &severity in severities {
            let spec = CorruptionSpec::new(kind, severity)?;
            let corrupted = corrupt(images, &spec, seed)?;
            let stem = format!("{}_s{}", kind.name(), severity);
            let npy_path = out_dir.join(format!("{stem}.npy"));
            let flat: Vec<f64> = corrupted.iter().copied().collect();
            crate::npy::write_npy(&npy_path, corrupted.shape(), &flat)?;

            let digest = hex::encode(Sha256::digest(std::fs::read(&npy_path)?));
            let manifest = serde_json::json!({
                "kind": kind.name(),
                "severity": severity,
                "seed": seed,
                "sha256": digest,
                "shape": corrupted.shape(),
            });
            std::fs::write(
                out_dir.join(format!("{stem}.json")),
                serde_json::to_string_pretty(&manifest).unwrap(),
            )?;
            written.push(npy_path);
        }
    }
    Ok(written)
}
