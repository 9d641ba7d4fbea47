//! Architecture catalogue.
//!
//! Four fixed topologies selected by id. None of them use batch
//! normalization: every forward pass is a pure function of the parameters,
//! which keeps gradient checks exact and batch composition irrelevant to
//! per-sample outputs.

use crate::model::layers::{Conv2d, Dense, Layer, Network, ResBlock};
use crate::rng::Stream;
use crate::{Error, Result};
use ndarray::ArrayD;
use rand::Rng;
use std::fmt;
use std::str::FromStr;

/// Input standardization constants baked into every architecture.
pub const NORM_MEAN: f64 = 0.5;
pub const NORM_STD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchitectureId {
    Linear,
    Mlp,
    SmallCnn,
    Resnet32Like,
}

pub const ALL_ARCHITECTURES: [ArchitectureId; 4] = [
    ArchitectureId::Linear,
    ArchitectureId::Mlp,
    ArchitectureId::SmallCnn,
    ArchitectureId::Resnet32Like,
];

impl fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArchitectureId::Linear => "linear",
            ArchitectureId::Mlp => "mlp",
            ArchitectureId::SmallCnn => "small-cnn",
            ArchitectureId::Resnet32Like => "resnet32-like",
        };
        f.write_str(s)
    }
}

impl FromStr for ArchitectureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ArchitectureId::Linear),
            "mlp" => Ok(ArchitectureId::Mlp),
            "small-cnn" => Ok(ArchitectureId::SmallCnn),
            "resnet32-like" => Ok(ArchitectureId::Resnet32Like),
            other => Err(Error::UnsupportedArchitecture(other.to_string())),
        }
    }
}

/// Glorot-uniform sample bound for the given fan pair.
fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot_array(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Stream) -> ArrayD<f64> {
    let bound = glorot_bound(fan_in, fan_out);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    ArrayD::from_shape_vec(ndarray::IxDyn(shape), data).unwrap()
}

fn conv(ic: usize, oc: usize, k: usize, stride: usize, pad: usize, rng: &mut Stream) -> Conv2d {
    Conv2d {
        w: glorot_array(&[oc, ic, k, k], ic * k * k, oc * k * k, rng),
        b: ArrayD::zeros(ndarray::IxDyn(&[oc])),
        stride,
        pad,
    }
}

fn dense(fan_in: usize, fan_out: usize, rng: &mut Stream) -> Dense {
    Dense {
        w: glorot_array(&[fan_out, fan_in], fan_in, fan_out, rng),
        b: ArrayD::zeros(ndarray::IxDyn(&[fan_out])),
    }
}

/// Rows for an expanded head, drawn with the fan pair of the full new head so
/// old and new rows live on comparable scales.
pub(crate) fn head_rows(
    fan_in: usize,
    fan_out_total: usize,
    n_new: usize,
    rng: &mut Stream,
) -> ArrayD<f64> {
    glorot_array(&[n_new, fan_in], fan_in, fan_out_total, rng)
}

fn block(ic: usize, oc: usize, stride: usize, rng: &mut Stream) -> Layer {
    let proj = (stride != 1 || ic != oc).then(|| conv(ic, oc, 1, stride, 0, rng));
    Layer::Block(ResBlock {
        conv1: conv(ic, oc, 3, stride, 1, rng),
        conv2: conv(oc, oc, 3, 1, 1, rng),
        proj,
    })
}

/// Builds the network body plus head and reports the penultimate feature
/// width. `input_shape` is `(C, H, W)`; `n_head` is the initial number of
/// classifier outputs (at least 1).
pub fn build(
    arch: ArchitectureId,
    input_shape: (usize, usize, usize),
    n_head: usize,
    rng: &mut Stream,
) -> Result<(Network, usize)> {
    let (c, h, w) = input_shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::invalid_argument("input shape must be non-zero"));
    }
    if n_head == 0 {
        return Err(Error::invalid_argument("head needs at least one class"));
    }
    let normalize = Layer::Normalize {
        mean: vec![NORM_MEAN; c],
        std: vec![NORM_STD; c],
    };
    let (mut layers, feat) = match arch {
        // The linear probe is head-only on raw pixels: its penultimate
        // features are exactly the flattened input, which is what makes it
        // useful as a diagnostics oracle.
        ArchitectureId::Linear => (vec![Layer::Flatten], c * h * w),
        ArchitectureId::Mlp => {
            let mut layers = vec![normalize, Layer::Flatten];
            layers.push(Layer::Dense(dense(c * h * w, 128, rng)));
            layers.push(Layer::Relu);
            layers.push(Layer::Dense(dense(128, 64, rng)));
            layers.push(Layer::Relu);
            (layers, 64)
        }
        ArchitectureId::SmallCnn => {
            if h % 4 != 0 || w % 4 != 0 {
                return Err(Error::invalid_argument(format!(
                    "small-cnn needs height and width divisible by 4, got {h}x{w}"
                )));
            }
            let layers = vec![
                normalize,
                Layer::Conv(conv(c, 16, 3, 1, 1, rng)),
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Conv(conv(16, 32, 3, 1, 1, rng)),
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Flatten,
            ];
            (layers, 32 * (h / 4) * (w / 4))
        }
        ArchitectureId::Resnet32Like => {
            if h % 4 != 0 || w % 4 != 0 {
                return Err(Error::invalid_argument(format!(
                    "resnet32-like needs height and width divisible by 4, got {h}x{w}"
                )));
            }
            let mut layers = vec![normalize, Layer::Conv(conv(c, 16, 3, 1, 1, rng)), Layer::Relu];
            for widths in [(16usize, 16usize), (16, 32), (32, 64)] {
                let (ic, oc) = widths;
                let first_stride = if ic == oc { 1 } else { 2 };
                layers.push(block(ic, oc, first_stride, rng));
                for _ in 1..5 {
                    layers.push(block(oc, oc, 1, rng));
                }
            }
            layers.push(Layer::GlobalAvgPool);
            (layers, 64)
        }
    };
    layers.push(Layer::Dense(dense(feat, n_head, rng)));
    Ok((Network { layers }, feat))
}
