//! Network layers with hand-derived backward passes.
//!
//! Convolutions run as im2col + GEMM in fixed batch chunks, so every pass is
//! sequential and bit-reproducible. All math is f64.

use crate::{Error, Result};
use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix1, Ix2};

/// Batch chunk size for im2col buffers; bounds transient memory.
const CONV_CHUNK: usize = 64;

/// Activation flowing between layers.
#[derive(Debug, Clone)]
pub enum Act {
    Im(Array4<f64>),
    Flat(Array2<f64>),
}

impl Act {
    pub fn batch_len(&self) -> usize {
        match self {
            Act::Im(a) => a.shape()[0],
            Act::Flat(a) => a.shape()[0],
        }
    }

    fn expect_im(self, what: &str) -> Result<Array4<f64>> {
        match self {
            Act::Im(a) => Ok(a),
            Act::Flat(_) => Err(Error::invalid_argument(format!(
                "{what} expects a [B,C,H,W] activation"
            ))),
        }
    }

    fn expect_flat(self, what: &str) -> Result<Array2<f64>> {
        match self {
            Act::Flat(a) => Ok(a),
            Act::Im(_) => Err(Error::invalid_argument(format!(
                "{what} expects a [B,F] activation"
            ))),
        }
    }
}

/// Per-layer saved state for the backward pass.
#[derive(Debug)]
pub enum Cache {
    Input(Act),
    Block {
        x: Array4<f64>,
        pre1: Array4<f64>,
        pre_out: Array4<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `[OC, IC, KH, KW]`
    pub w: ArrayD<f64>,
    /// `[OC]`
    pub b: ArrayD<f64>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct Dense {
    /// `[OUT, IN]`
    pub w: ArrayD<f64>,
    /// `[OUT]`
    pub b: ArrayD<f64>,
}

#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    /// 1x1 projection shortcut when shape changes.
    pub proj: Option<Conv2d>,
}

#[derive(Debug, Clone)]
pub enum Layer {
    /// Fixed per-channel standardization; the model's first layer.
    Normalize { mean: Vec<f64>, std: Vec<f64> },
    Conv(Conv2d),
    Dense(Dense),
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Flatten,
    Block(ResBlock),
}

impl Conv2d {
    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.w.shape();
        (s[0], s[1], s[2], s[3])
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let (_, _, kh, kw) = self.dims();
        (
            (h + 2 * self.pad - kh) / self.stride + 1,
            (w + 2 * self.pad - kw) / self.stride + 1,
        )
    }

    fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, _, h, w) = dims4(x);
        let (oc, ic, kh, kw) = self.dims();
        let (oh, ow) = self.out_hw(h, w);
        let cols = ic * kh * kw;
        let wmat = self.w.view().into_shape((oc, cols)).unwrap();
        let bias = self.b.view().into_dimensionality::<Ix1>().unwrap();

        let mut out = Array4::zeros((n, oc, oh, ow));
        let mut b0 = 0;
        while b0 < n {
            let b1 = (b0 + CONV_CHUNK).min(n);
            let a = im2col(x, b0, b1, kh, kw, self.stride, self.pad, oh, ow);
            let res = a.dot(&wmat.t()); // [(b1-b0)*oh*ow, oc]
            let rs = res.as_slice().unwrap();
            let os = out.as_slice_mut().unwrap();
            for bi in b0..b1 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let row = ((bi - b0) * oh + oy) * ow + ox;
                        for c in 0..oc {
                            os[((bi * oc + c) * oh + oy) * ow + ox] =
                                rs[row * oc + c] + bias[c];
                        }
                    }
                }
            }
            b0 = b1;
        }
        out
    }

    /// Returns `(dx, Some((dw, db)))` or `(dx, None)` when parameter
    /// gradients are not wanted (attack passes).
    fn backward(
        &self,
        x: &Array4<f64>,
        dout: &Array4<f64>,
        want_params: bool,
    ) -> (Array4<f64>, Option<(ArrayD<f64>, ArrayD<f64>)>) {
        let (n, ic_, h, w) = dims4(x);
        let (oc, ic, kh, kw) = self.dims();
        debug_assert_eq!(ic_, ic);
        let (oh, ow) = self.out_hw(h, w);
        let cols = ic * kh * kw;
        let wmat = self.w.view().into_shape((oc, cols)).unwrap();

        let mut dx = Array4::zeros((n, ic, h, w));
        let mut dw_mat = Array2::<f64>::zeros((oc, cols));
        let mut db = Array1::<f64>::zeros(oc);

        let mut b0 = 0;
        while b0 < n {
            let b1 = (b0 + CONV_CHUNK).min(n);
            let rows = (b1 - b0) * oh * ow;
            let mut dout_m = Array2::zeros((rows, oc));
            {
                let ds = dout.as_slice().unwrap();
                let dm = dout_m.as_slice_mut().unwrap();
                for bi in b0..b1 {
                    for c in 0..oc {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let row = ((bi - b0) * oh + oy) * ow + ox;
                                dm[row * oc + c] = ds[((bi * oc + c) * oh + oy) * ow + ox];
                            }
                        }
                    }
                }
            }
            if want_params {
                let a = im2col(x, b0, b1, kh, kw, self.stride, self.pad, oh, ow);
                dw_mat = dw_mat + dout_m.t().dot(&a);
                db = db + dout_m.sum_axis(Axis(0));
            }
            let da = dout_m.dot(&wmat); // [rows, cols]
            col2im(
                &da,
                dx.view_mut(),
                b0,
                b1,
                kh,
                kw,
                self.stride,
                self.pad,
                oh,
                ow,
            );
            b0 = b1;
        }

        let grads = want_params.then(|| {
            (
                dw_mat.into_shape((oc, ic, kh, kw)).unwrap().into_dyn(),
                db.into_dyn(),
            )
        });
        (dx, grads)
    }
}

impl Dense {
    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let w = self.w.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.b.view().into_dimensionality::<Ix1>().unwrap();
        x.dot(&w.t()) + b
    }

    fn backward(
        &self,
        x: &Array2<f64>,
        dout: &Array2<f64>,
        want_params: bool,
    ) -> (Array2<f64>, Option<(ArrayD<f64>, ArrayD<f64>)>) {
        let w = self.w.view().into_dimensionality::<Ix2>().unwrap();
        let dx = dout.dot(&w);
        let grads = want_params.then(|| {
            (
                dout.t().dot(x).into_dyn(),
                dout.sum_axis(Axis(0)).into_dyn(),
            )
        });
        (dx, grads)
    }
}

impl ResBlock {
    fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, Array4<f64>, Array4<f64>) {
        let pre1 = self.conv1.forward(x);
        let mid = pre1.mapv(|v| v.max(0.0));
        let main = self.conv2.forward(&mid);
        let shortcut = match &self.proj {
            Some(p) => p.forward(x),
            None => x.clone(),
        };
        let pre_out = main + shortcut;
        let out = pre_out.mapv(|v| v.max(0.0));
        (out, pre1, pre_out)
    }

    fn backward(
        &self,
        x: &Array4<f64>,
        pre1: &Array4<f64>,
        pre_out: &Array4<f64>,
        dout: &Array4<f64>,
        want_params: bool,
    ) -> (Array4<f64>, Vec<ArrayD<f64>>) {
        let mut dz = dout.clone();
        dz.zip_mut_with(pre_out, |d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let mid = pre1.mapv(|v| v.max(0.0));
        let (dmid, g2) = self.conv2.backward(&mid, &dz, want_params);
        let mut dpre1 = dmid;
        dpre1.zip_mut_with(pre1, |d, &a| {
            if a <= 0.0 {
                *d = 0.0;
            }
        });
        let (dx_main, g1) = self.conv1.backward(x, &dpre1, want_params);
        let (dx_short, gp) = match &self.proj {
            Some(p) => {
                let (d, g) = p.backward(x, &dz, want_params);
                (d, g)
            }
            None => (dz, None),
        };
        let dx = dx_main + dx_short;
        let mut grads = Vec::new();
        if want_params {
            let (w1, b1) = g1.unwrap();
            let (w2, b2) = g2.unwrap();
            grads.push(w1);
            grads.push(b1);
            grads.push(w2);
            grads.push(b2);
            if let Some((wp, bp)) = gp {
                grads.push(wp);
                grads.push(bp);
            }
        }
        (dx, grads)
    }
}

impl Layer {
    pub fn forward(&self, input: Act) -> Result<(Act, Cache)> {
        match self {
            Layer::Normalize { mean, std } => {
                let x = input.expect_im("normalize")?;
                let c = x.shape()[1];
                if mean.len() != c {
                    return Err(Error::invalid_argument(format!(
                        "normalize configured for {} channels, input has {c}",
                        mean.len()
                    )));
                }
                let mut out = x.clone();
                for (ch, mut lane) in out.axis_iter_mut(Axis(1)).enumerate() {
                    lane.mapv_inplace(|v| (v - mean[ch]) / std[ch]);
                }
                Ok((Act::Im(out), Cache::Input(Act::Im(x))))
            }
            Layer::Conv(conv) => {
                let x = input.expect_im("conv")?;
                let out = conv.forward(&x);
                Ok((Act::Im(out), Cache::Input(Act::Im(x))))
            }
            Layer::Dense(dense) => {
                let x = input.expect_flat("dense")?;
                if x.shape()[1] != dense.w.shape()[1] {
                    return Err(Error::invalid_argument(format!(
                        "dense expects {} features, got {}",
                        dense.w.shape()[1],
                        x.shape()[1]
                    )));
                }
                let out = dense.forward(&x);
                Ok((Act::Flat(out), Cache::Input(Act::Flat(x))))
            }
            Layer::Relu => match input {
                Act::Im(x) => {
                    let out = x.mapv(|v| v.max(0.0));
                    Ok((Act::Im(out), Cache::Input(Act::Im(x))))
                }
                Act::Flat(x) => {
                    let out = x.mapv(|v| v.max(0.0));
                    Ok((Act::Flat(out), Cache::Input(Act::Flat(x))))
                }
            },
            Layer::MaxPool2 => {
                let x = input.expect_im("maxpool")?;
                let (n, c, h, w) = dims4(&x);
                let (oh, ow) = (h / 2, w / 2);
                let mut out = Array4::zeros((n, c, oh, ow));
                for b in 0..n {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        best = best.max(x[[b, ch, 2 * oy + dy, 2 * ox + dx]]);
                                    }
                                }
                                out[[b, ch, oy, ox]] = best;
                            }
                        }
                    }
                }
                Ok((Act::Im(out), Cache::Input(Act::Im(x))))
            }
            Layer::GlobalAvgPool => {
                let x = input.expect_im("global-avg-pool")?;
                let (n, c, h, w) = dims4(&x);
                let mut out = Array2::zeros((n, c));
                for b in 0..n {
                    for ch in 0..c {
                        let mut acc = 0.0;
                        for y in 0..h {
                            for xx in 0..w {
                                acc += x[[b, ch, y, xx]];
                            }
                        }
                        out[[b, ch]] = acc / (h * w) as f64;
                    }
                }
                Ok((Act::Flat(out), Cache::Input(Act::Im(x))))
            }
            Layer::Flatten => {
                let x = input.expect_im("flatten")?;
                let (n, c, h, w) = dims4(&x);
                let out = x.clone().into_shape((n, c * h * w)).unwrap();
                Ok((Act::Flat(out), Cache::Input(Act::Im(x))))
            }
            Layer::Block(block) => {
                let x = input.expect_im("residual block")?;
                let (out, pre1, pre_out) = block.forward(&x);
                Ok((Act::Im(out), Cache::Block { x, pre1, pre_out }))
            }
        }
    }

    pub fn backward(
        &self,
        cache: &Cache,
        dout: Act,
        want_params: bool,
    ) -> Result<(Act, Vec<ArrayD<f64>>)> {
        match (self, cache) {
            (Layer::Normalize { std, .. }, Cache::Input(_)) => {
                let mut d = dout.expect_im("normalize backward")?;
                for (ch, mut lane) in d.axis_iter_mut(Axis(1)).enumerate() {
                    lane.mapv_inplace(|v| v / std[ch]);
                }
                Ok((Act::Im(d), Vec::new()))
            }
            (Layer::Conv(conv), Cache::Input(Act::Im(x))) => {
                let d = dout.expect_im("conv backward")?;
                let (dx, grads) = conv.backward(x, &d, want_params);
                let grads = match grads {
                    Some((dw, db)) => vec![dw, db],
                    None => Vec::new(),
                };
                Ok((Act::Im(dx), grads))
            }
            (Layer::Dense(dense), Cache::Input(Act::Flat(x))) => {
                let d = dout.expect_flat("dense backward")?;
                let (dx, grads) = dense.backward(x, &d, want_params);
                let grads = match grads {
                    Some((dw, db)) => vec![dw, db],
                    None => Vec::new(),
                };
                Ok((Act::Flat(dx), grads))
            }
            (Layer::Relu, Cache::Input(input)) => match (input, dout) {
                (Act::Im(x), Act::Im(mut d)) => {
                    d.zip_mut_with(x, |dv, &xv| {
                        if xv <= 0.0 {
                            *dv = 0.0;
                        }
                    });
                    Ok((Act::Im(d), Vec::new()))
                }
                (Act::Flat(x), Act::Flat(mut d)) => {
                    d.zip_mut_with(x, |dv, &xv| {
                        if xv <= 0.0 {
                            *dv = 0.0;
                        }
                    });
                    Ok((Act::Flat(d), Vec::new()))
                }
                _ => Err(Error::invalid_argument("relu backward shape mismatch")),
            },
            (Layer::MaxPool2, Cache::Input(Act::Im(x))) => {
                let d = dout.expect_im("maxpool backward")?;
                let (n, c, h, w) = dims4(x);
                let (oh, ow) = (h / 2, w / 2);
                let mut dx = Array4::zeros((n, c, h, w));
                for b in 0..n {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                // First maximum in scan order receives the gradient.
                                let (mut by, mut bx, mut best) = (0, 0, f64::NEG_INFINITY);
                                for dy in 0..2 {
                                    for dxx in 0..2 {
                                        let v = x[[b, ch, 2 * oy + dy, 2 * ox + dxx]];
                                        if v > best {
                                            best = v;
                                            by = dy;
                                            bx = dxx;
                                        }
                                    }
                                }
                                dx[[b, ch, 2 * oy + by, 2 * ox + bx]] += d[[b, ch, oy, ox]];
                            }
                        }
                    }
                }
                Ok((Act::Im(dx), Vec::new()))
            }
            (Layer::GlobalAvgPool, Cache::Input(Act::Im(x))) => {
                let d = dout.expect_flat("global-avg-pool backward")?;
                let (n, c, h, w) = dims4(x);
                let scale = 1.0 / (h * w) as f64;
                let mut dx = Array4::zeros((n, c, h, w));
                for b in 0..n {
                    for ch in 0..c {
                        let g = d[[b, ch]] * scale;
                        for y in 0..h {
                            for xx in 0..w {
                                dx[[b, ch, y, xx]] = g;
                            }
                        }
                    }
                }
                Ok((Act::Im(dx), Vec::new()))
            }
            (Layer::Flatten, Cache::Input(Act::Im(x))) => {
                let d = dout.expect_flat("flatten backward")?;
                let (n, c, h, w) = dims4(x);
                let dx = d.into_shape((n, c, h, w)).unwrap();
                Ok((Act::Im(dx), Vec::new()))
            }
            (Layer::Block(block), Cache::Block { x, pre1, pre_out }) => {
                let d = dout.expect_im("residual block backward")?;
                let (dx, grads) = block.backward(x, pre1, pre_out, &d, want_params);
                Ok((Act::Im(dx), grads))
            }
            _ => Err(Error::invalid_argument("layer/cache mismatch in backward")),
        }
    }

    /// Parameter arrays in enumeration order (`w` before `b`).
    pub fn params(&self) -> Vec<&ArrayD<f64>> {
        match self {
            Layer::Conv(c) => vec![&c.w, &c.b],
            Layer::Dense(d) => vec![&d.w, &d.b],
            Layer::Block(b) => {
                let mut p = vec![&b.conv1.w, &b.conv1.b, &b.conv2.w, &b.conv2.b];
                if let Some(proj) = &b.proj {
                    p.push(&proj.w);
                    p.push(&proj.b);
                }
                p
            }
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        match self {
            Layer::Conv(c) => vec![&mut c.w, &mut c.b],
            Layer::Dense(d) => vec![&mut d.w, &mut d.b],
            Layer::Block(b) => {
                let mut p = vec![
                    &mut b.conv1.w,
                    &mut b.conv1.b,
                    &mut b.conv2.w,
                    &mut b.conv2.b,
                ];
                if let Some(proj) = &mut b.proj {
                    p.push(&mut proj.w);
                    p.push(&mut proj.b);
                }
                p
            }
            _ => Vec::new(),
        }
    }
}

/// Sequential network; the last layer is always the classifier head (Dense).
#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn params(&self) -> Vec<&ArrayD<f64>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub(crate) fn head(&self) -> &Dense {
        match self.layers.last() {
            Some(Layer::Dense(d)) => d,
            _ => unreachable!("network head is always dense"),
        }
    }

    pub(crate) fn head_mut(&mut self) -> &mut Dense {
        match self.layers.last_mut() {
            Some(Layer::Dense(d)) => d,
            _ => unreachable!("network head is always dense"),
        }
    }

    /// Forward pass keeping per-layer caches; returns (caches, logits,
    /// penultimate features).
    pub fn forward_trace(
        &self,
        images: &Array4<f64>,
    ) -> Result<(Vec<Cache>, Array2<f64>, Array2<f64>)> {
        let mut act = Act::Im(images.clone());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(act)?;
            caches.push(cache);
            act = out;
        }
        let logits = act.expect_flat("network output")?;
        let features = match caches.last() {
            Some(Cache::Input(Act::Flat(f))) => f.clone(),
            _ => unreachable!("head cache is always flat"),
        };
        Ok((caches, logits, features))
    }

    /// Backward from d(loss)/d(logits); returns input gradients and, when
    /// requested, parameter gradients aligned with [`Network::params`].
    pub fn backward(
        &self,
        caches: &[Cache],
        dlogits: Array2<f64>,
        want_params: bool,
    ) -> Result<(Array4<f64>, Option<Vec<ArrayD<f64>>>)> {
        let mut d = Act::Flat(dlogits);
        let mut per_layer: Vec<Vec<ArrayD<f64>>> = Vec::with_capacity(self.layers.len());
        per_layer.resize_with(self.layers.len(), Vec::new);
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let (dinput, grads) = layer.backward(&caches[li], d, want_params)?;
            per_layer[li] = grads;
            d = dinput;
        }
        let dx = d.expect_im("network input gradient")?;
        let grads = want_params.then(|| per_layer.into_iter().flatten().collect());
        Ok((dx, grads))
    }
}

pub(crate) fn dims4(a: &Array4<f64>) -> (usize, usize, usize, usize) {
    let s = a.shape();
    (s[0], s[1], s[2], s[3])
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &Array4<f64>,
    b0: usize,
    b1: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (_, ic, h, w) = dims4(x);
    let cols = ic * kh * kw;
    let rows = (b1 - b0) * oh * ow;
    let mut a = Array2::zeros((rows, cols));
    let xs = x.as_slice().unwrap();
    let as_ = a.as_slice_mut().unwrap();
    for bi in b0..b1 {
        for oy in 0..oh {
            let iy0 = (oy * stride) as isize - pad as isize;
            for ox in 0..ow {
                let ix0 = (ox * stride) as isize - pad as isize;
                let row = ((bi - b0) * oh + oy) * ow + ox;
                let base = row * cols;
                for c in 0..ic {
                    for ky in 0..kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue; // zero padding: already zeros
                        }
                        let src_row = ((bi * ic + c) * h + iy as usize) * w;
                        let dst = base + (c * kh + ky) * kw;
                        for kx in 0..kw {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            as_[dst + kx] = xs[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    a
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    da: &Array2<f64>,
    mut dx: ndarray::ArrayViewMut4<f64>,
    b0: usize,
    b1: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let s = dx.shape().to_vec();
    let (ic, h, w) = (s[1], s[2], s[3]);
    let cols = ic * kh * kw;
    let das = da.as_slice().unwrap();
    for bi in b0..b1 {
        for oy in 0..oh {
            let iy0 = (oy * stride) as isize - pad as isize;
            for ox in 0..ow {
                let ix0 = (ox * stride) as isize - pad as isize;
                let row = ((bi - b0) * oh + oy) * ow + ox;
                let base = row * cols;
                for c in 0..ic {
                    for ky in 0..kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = base + (c * kh + ky) * kw;
                        for kx in 0..kw {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            dx[[bi, c, iy as usize, ix as usize]] += das[src + kx];
                        }
                    }
                }
            }
        }
    }
}
