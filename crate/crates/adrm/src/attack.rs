//! White-box evasion attacks: FGSM and projected gradient descent.
//!
//! Both attacks run through one shared step/projection routine, so a
//! single-step L-inf PGD without random start is *bit-identical* to FGSM,
//! not merely close. All perturbations respect the epsilon ball around the
//! clean input and the `[0, 1]` pixel box.

use crate::model::GradientSource;
use crate::rng::Stream;
use crate::{Error, Result};
use ndarray::{Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Fgsm,
    PgdLinf,
    PgdL2,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::PgdLinf => "pgd-linf",
            AttackKind::PgdL2 => "pgd-l2",
        })
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd-linf" => Ok(AttackKind::PgdLinf),
            "pgd-l2" => Ok(AttackKind::PgdL2),
            other => Err(Error::invalid_argument(format!("unknown attack kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Ball radius in pixel units (e.g. 4/255).
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Start from a uniform point inside the ball instead of the clean
    /// input. FGSM never uses it.
    pub random_start: bool,
}

impl AttackSpec {
    pub fn fgsm(epsilon: f64) -> Self {
        AttackSpec {
            kind: AttackKind::Fgsm,
            epsilon,
            steps: 1,
            step_size: epsilon,
            random_start: false,
        }
    }

    /// PGD defaults: 10 steps of 2.5 * epsilon / steps with random start.
    pub fn pgd_linf(epsilon: f64) -> Self {
        AttackSpec {
            kind: AttackKind::PgdLinf,
            epsilon,
            steps: 10,
            step_size: 2.5 * epsilon / 10.0,
            random_start: true,
        }
    }

    pub fn pgd_l2(epsilon: f64) -> Self {
        AttackSpec {
            kind: AttackKind::PgdL2,
            epsilon,
            steps: 10,
            step_size: 2.5 * epsilon / 10.0,
            random_start: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::invalid_argument("attack epsilon must be >= 0"));
        }
        if self.steps == 0 {
            return Err(Error::invalid_argument("attack needs at least one step"));
        }
        if !self.step_size.is_finite() || self.step_size < 0.0 {
            return Err(Error::invalid_argument("attack step size must be >= 0"));
        }
        if self.kind == AttackKind::Fgsm && (self.steps != 1 || self.random_start) {
            return Err(Error::invalid_argument(
                "fgsm is single-step without random start",
            ));
        }
        Ok(())
    }
}

/// `sign` with the zero-gradient convention `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_pixel_box(images: &Array4<f64>) -> Result<()> {
    if images.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::invalid_argument(
            "attack input must lie in [0, 1] pixel range",
        ));
    }
    Ok(())
}

/// One ascent step plus projection, shared by every attack kind.
fn step_and_project(
    kind: AttackKind,
    adv: &mut Array4<f64>,
    grads: &Array4<f64>,
    clean: &Array4<f64>,
    epsilon: f64,
    step_size: f64,
) {
    match kind {
        AttackKind::Fgsm | AttackKind::PgdLinf => {
            azip_update(adv, grads, clean, |a, g, x| {
                let stepped = a + step_size * sign(g);
                // Project onto the L-inf ball, then the pixel box.
                stepped.max(x - epsilon).min(x + epsilon).clamp(0.0, 1.0)
            });
        }
        AttackKind::PgdL2 => {
            let b = adv.shape()[0];
            for i in 0..b {
                let g = grads.index_axis(Axis(0), i);
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut a = adv.index_axis_mut(Axis(0), i);
                if norm > 0.0 {
                    let scale = step_size / norm;
                    a.zip_mut_with(&g, |av, gv| *av += scale * gv);
                }
                // Project the offset back into the L2 ball.
                let x = clean.index_axis(Axis(0), i);
                let mut d2 = 0.0;
                ndarray::Zip::from(&a).and(&x).for_each(|av, xv| {
                    let d = av - xv;
                    d2 += d * d;
                });
                let dn = d2.sqrt();
                if dn > epsilon && dn > 0.0 {
                    let shrink = epsilon / dn;
                    a.zip_mut_with(&x, |av, xv| *av = xv + (*av - xv) * shrink);
                }
                a.mapv_inplace(|v| v.clamp(0.0, 1.0));
            }
        }
    }
}

fn azip_update(
    adv: &mut Array4<f64>,
    grads: &Array4<f64>,
    clean: &Array4<f64>,
    f: impl Fn(f64, f64, f64) -> f64,
) {
    ndarray::Zip::from(adv)
        .and(grads)
        .and(clean)
        .for_each(|a, &g, &x| *a = f(*a, g, x));
}

/// Runs the attack in `spec` against `source`, maximizing the loss on
/// `labels`. `rng` feeds the random start only; specs without random start
/// never draw from it.
pub fn perturb(
    source: &dyn GradientSource,
    images: &Array4<f64>,
    labels: &[usize],
    spec: &AttackSpec,
    rng: &mut Stream,
) -> Result<Array4<f64>> {
    spec.validate()?;
    check_pixel_box(images)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::invalid_argument("image/label count mismatch"));
    }

    let mut adv = images.clone();
    if spec.random_start && spec.epsilon > 0.0 {
        match spec.kind {
            AttackKind::Fgsm => unreachable!("validated above"),
            AttackKind::PgdLinf => {
                ndarray::Zip::from(&mut adv).for_each(|a| {
                    *a = (*a + rng.gen_range(-spec.epsilon..=spec.epsilon)).clamp(0.0, 1.0);
                });
            }
            AttackKind::PgdL2 => {
                let b = images.shape()[0];
                let d = images.len() / b;
                for i in 0..b {
                    let mut dir: Vec<f64> =
                        (0..d).map(|_| StandardNormal.sample(rng)).collect();
                    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let u: f64 = rng.gen_range(0.0..1.0f64);
                    let radius = spec.epsilon * u.powf(1.0 / d as f64);
                    let scale = if n > 0.0 { radius / n } else { 0.0 };
                    dir.iter_mut().for_each(|v| *v *= scale);
                    let mut a = adv.index_axis_mut(Axis(0), i);
                    for (av, dv) in a.iter_mut().zip(dir.iter()) {
                        *av = (*av + dv).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }

    for _ in 0..spec.steps {
        let (_, grads) = source.input_gradients(&adv, labels)?;
        step_and_project(spec.kind, &mut adv, &grads, images, spec.epsilon, spec.step_size);
    }
    Ok(adv)
}

/// Fast gradient sign method: `x' = clip(x + epsilon * sign(grad), 0, 1)`.
pub fn fgsm(
    source: &dyn GradientSource,
    images: &Array4<f64>,
    labels: &[usize],
    epsilon: f64,
) -> Result<Array4<f64>> {
    // FGSM draws nothing; the stream below exists only to satisfy `perturb`.
    let mut unused = crate::rng::SeedBlock::stream(0);
    perturb(source, images, labels, &AttackSpec::fgsm(epsilon), &mut unused)
}
