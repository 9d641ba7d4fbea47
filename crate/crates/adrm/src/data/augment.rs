//! Training-time augmentation: random flip, padded crop, brightness and
//! contrast jitter. Each transform is skipped entirely when its parameters
//! make it a no-op, so a disabled config returns the input bit-for-bit.

use crate::data::shape4;
use crate::{Error, Result};
use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Probability of a horizontal flip.
    pub flip_p: f64,
    /// Zero-padding before a random crop back to the original size.
    pub crop_pad: usize,
    /// Additive brightness shift drawn from this range.
    pub brightness: (f64, f64),
    /// Contrast scale around the per-image mean, drawn from this range.
    pub contrast: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_p: 0.5,
            crop_pad: 1,
            brightness: (-0.05, 0.05),
            contrast: (0.95, 1.05),
        }
    }
}

impl AugmentConfig {
    /// Config under which `augment_batch` is the identity.
    pub fn identity() -> Self {
        AugmentConfig {
            flip_p: 0.0,
            crop_pad: 0,
            brightness: (0.0, 0.0),
            contrast: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_p) {
            return Err(Error::invalid_argument("flip_p must be in [0,1]"));
        }
        if self.brightness.0 > self.brightness.1 || self.contrast.0 > self.contrast.1 {
            return Err(Error::invalid_argument("augment ranges must be low <= high"));
        }
        Ok(())
    }
}

/// Apply seeded augmentation to a batch. Output keeps the input shape and is
/// clipped to `[0,1]`.
pub fn augment_batch(
    images: &Array4<f64>,
    config: &AugmentConfig,
    seed: u64,
) -> Result<Array4<f64>> {
    config.validate()?;
    if images.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_argument("augmenting non-finite input"));
    }
    let mut rng = crate::rng::SeedBlock::stream(seed);
    let mut out = images.clone();
    let (b, c, h, w) = shape4(images);

    for i in 0..b {
        // Fixed draw order per image keeps the stream deterministic.
        if config.flip_p > 0.0 && rng.gen::<f64>() < config.flip_p {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w / 2 {
                        let a = out[[i, ch, y, x]];
                        out[[i, ch, y, x]] = out[[i, ch, y, w - 1 - x]];
                        out[[i, ch, y, w - 1 - x]] = a;
                    }
                }
            }
        }
        if config.crop_pad > 0 {
            let p = config.crop_pad;
            let dy = rng.gen_range(0..=2 * p);
            let dx = rng.gen_range(0..=2 * p);
            let src = out.index_axis(ndarray::Axis(0), i).to_owned();
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        // Source coordinate in the padded frame.
                        let sy = y as isize + dy as isize - p as isize;
                        let sx = x as isize + dx as isize - p as isize;
                        out[[i, ch, y, x]] = if sy >= 0
                            && sy < h as isize
                            && sx >= 0
                            && sx < w as isize
                        {
                            src[[ch, sy as usize, sx as usize]]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
        if config.contrast != (1.0, 1.0) {
            let scale = rng.gen_range(config.contrast.0..=config.contrast.1);
            let mut mean = 0.0;
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        mean += out[[i, ch, y, x]];
                    }
                }
            }
            mean /= (c * h * w) as f64;
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let v = (out[[i, ch, y, x]] - mean) * scale + mean;
                        out[[i, ch, y, x]] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
        if config.brightness != (0.0, 0.0) {
            let shift = rng.gen_range(config.brightness.0..=config.brightness.1);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out[[i, ch, y, x]] = (out[[i, ch, y, x]] + shift).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(values: &[f64], c: usize, h: usize, w: usize) -> Array4<f64> {
        Array4::from_shape_vec((values.len() / (c * h * w), c, h, w), values.to_vec()).unwrap()
    }

    #[test]
    fn identity_config_returns_input() {
        let x = batch(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8], 2, 2, 2);
        let y = augment_batch(&x, &AugmentConfig::identity(), 3).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn forced_flip_reverses_width() {
        let x = batch(&[0.1, 0.2, 0.3, 0.4], 1, 2, 2);
        let cfg = AugmentConfig {
            flip_p: 1.0,
            ..AugmentConfig::identity()
        };
        let y = augment_batch(&x, &cfg, 9).unwrap();
        let expected = batch(&[0.2, 0.1, 0.4, 0.3], 1, 2, 2);
        assert_eq!(y, expected);
    }

    #[test]
    fn brightness_shift_clips_at_one() {
        // Hand-applied oracle: 0.9 + 0.2 = 1.1, clipped to 1.0.
        let x = Array4::from_elem((2, 3, 4, 4), 0.9);
        let cfg = AugmentConfig {
            brightness: (0.2, 0.2),
            ..AugmentConfig::identity()
        };
        let y = augment_batch(&x, &cfg, 0).unwrap();
        assert!(y.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let x = Array4::from_shape_fn((4, 3, 8, 8), |(i, c, y, xx)| {
            ((i + c + y + xx) % 7) as f64 / 7.0
        });
        let cfg = AugmentConfig::default();
        let a = augment_batch(&x, &cfg, 5).unwrap();
        let b = augment_batch(&x, &cfg, 5).unwrap();
        assert_eq!(a, b);
        let c = augment_batch(&x, &cfg, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_non_finite() {
        let mut x = Array4::from_elem((1, 1, 2, 2), 0.5);
        x[[0, 0, 0, 0]] = f64::NAN;
        assert!(augment_batch(&x, &AugmentConfig::default(), 0).is_err());
    }

    #[test]
    fn output_stays_in_range() {
        let x = Array4::from_shape_fn((6, 3, 8, 8), |(i, c, y, xx)| {
            ((i * 31 + c * 7 + y * 3 + xx) % 11) as f64 / 10.0
        });
        let cfg = AugmentConfig {
            flip_p: 0.5,
            crop_pad: 2,
            brightness: (-0.3, 0.3),
            contrast: (0.5, 1.5),
        };
        for seed in 0..20 {
            let y = augment_batch(&x, &cfg, seed).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
