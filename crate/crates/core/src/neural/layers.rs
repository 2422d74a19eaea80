use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Fully connected layer, `y = W x + b` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform weights in `±limit`, zero bias.
    pub fn uniform(in_dim: usize, out_dim: usize, limit: f64, rng: &mut impl Rng) -> Self {
        let mut d = Self::zeros(in_dim, out_dim);
        d.weight
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-limit..=limit));
        d
    }
}

/// 3×3 convolution, stride 1, zero "same" padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out, in, 3, 3]` row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![0.0; in_channels * out_channels * 9],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn uniform(
        in_channels: usize,
        out_channels: usize,
        limit: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut c = Self::zeros(in_channels, out_channels);
        c.weight
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-limit..=limit));
        c
    }
}

/// Batch normalisation over the leading feature/channel axis of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub features: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    /// Weight of the old running statistics in each update.
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            features,
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            eps: 1e-5,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    MaxPool2x2,
    AvgPool2x2,
    Upsample2x2,
    BatchNorm(BatchNorm),
    Activation { function: Activation },
}

#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    Input(Tensor),
    Pool {
        argmax: Vec<usize>,
        in_shape: Vec<usize>,
    },
    AvgPool {
        in_shape: Vec<usize>,
    },
    Upsample {
        in_shape: Vec<usize>,
    },
    Norm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
        train: bool,
        count: usize,
    },
    Output(Tensor),
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Layer {
    pub fn relu() -> Self {
        Layer::Activation {
            function: Activation::Relu,
        }
    }

    pub fn sigmoid() -> Self {
        Layer::Activation {
            function: Activation::Sigmoid,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool2x2 => "max_pool_2x2",
            Layer::AvgPool2x2 => "avg_pool_2x2",
            Layer::Upsample2x2 => "upsample_2x2",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Activation { .. } => "activation",
        }
    }

    /// Per-sample output shape, or `None` if `input` is not accepted.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match self {
            Layer::Dense(d) => (input == [d.in_dim]).then(|| vec![d.out_dim]),
            Layer::Conv2d(c) => (input.len() == 3 && input[0] == c.in_channels)
                .then(|| vec![c.out_channels, input[1], input[2]]),
            Layer::MaxPool2x2 | Layer::AvgPool2x2 => (input.len() == 3)
                .then(|| vec![input[0], input[1].div_ceil(2), input[2].div_ceil(2)]),
            Layer::Upsample2x2 => {
                (input.len() == 3).then(|| vec![input[0], input[1] * 2, input[2] * 2])
            }
            Layer::BatchNorm(b) => {
                (!input.is_empty() && input.len() != 2 && input[0] == b.features)
                    .then(|| input.to_vec())
            }
            Layer::Activation { .. } => Some(input.to_vec()),
        }
    }

    /// Shape this layer expects, for error messages.
    pub fn expected_input(&self, input: &[usize]) -> Vec<usize> {
        match self {
            Layer::Dense(d) => vec![d.in_dim],
            Layer::Conv2d(c) => vec![
                c.in_channels,
                input.get(1).copied().unwrap_or(0),
                input.get(2).copied().unwrap_or(0),
            ],
            Layer::BatchNorm(b) => {
                let mut s = input.to_vec();
                if s.is_empty() {
                    s.push(b.features);
                } else {
                    s[0] = b.features;
                }
                s
            }
            _ => input.to_vec(),
        }
    }

    /// Trainable parameter tensors in declaration order.
    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            _ => vec![],
        }
    }

    pub(crate) fn forward(&self, x: Tensor, train: bool) -> (Tensor, LayerCache) {
        match self {
            Layer::Dense(d) => (dense_forward(d, &x), LayerCache::Input(x)),
            Layer::Conv2d(c) => (conv_forward(c, &x), LayerCache::Input(x)),
            Layer::MaxPool2x2 => {
                let (y, argmax) = pool_forward(&x);
                (
                    y,
                    LayerCache::Pool {
                        argmax,
                        in_shape: x.shape().to_vec(),
                    },
                )
            }
            Layer::AvgPool2x2 => (
                avg_pool_forward(&x),
                LayerCache::AvgPool {
                    in_shape: x.shape().to_vec(),
                },
            ),
            Layer::Upsample2x2 => (
                upsample_forward(&x),
                LayerCache::Upsample {
                    in_shape: x.shape().to_vec(),
                },
            ),
            Layer::BatchNorm(b) => norm_forward(b, &x, train),
            Layer::Activation { function } => {
                let mut y = x;
                match function {
                    Activation::Relu => y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
                    Activation::Sigmoid => y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
                }
                (y.clone(), LayerCache::Output(y))
            }
        }
    }

    /// Returns the input gradient and the trainable-parameter gradients.
    pub(crate) fn backward(&self, cache: &LayerCache, grad: &Tensor) -> (Tensor, Vec<Vec<f64>>) {
        match (self, cache) {
            (Layer::Dense(d), LayerCache::Input(x)) => dense_backward(d, x, grad),
            (Layer::Conv2d(c), LayerCache::Input(x)) => conv_backward(c, x, grad),
            (Layer::MaxPool2x2, LayerCache::Pool { argmax, in_shape }) => {
                let mut dx = Tensor::zeros(in_shape.clone());
                for (g, &src) in grad.data().iter().zip(argmax) {
                    dx.data_mut()[src] += g;
                }
                (dx, vec![])
            }
            (Layer::AvgPool2x2, LayerCache::AvgPool { in_shape }) => {
                (avg_pool_backward(grad, in_shape), vec![])
            }
            (Layer::Upsample2x2, LayerCache::Upsample { in_shape }) => {
                (upsample_backward(grad, in_shape), vec![])
            }
            (Layer::BatchNorm(b), cache @ LayerCache::Norm { .. }) => norm_backward(b, cache, grad),
            (Layer::Activation { function }, LayerCache::Output(y)) => {
                let data = grad
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, y)| match function {
                        Activation::Relu => {
                            if *y > 0.0 {
                                *g
                            } else {
                                0.0
                            }
                        }
                        Activation::Sigmoid => g * y * (1.0 - y),
                    })
                    .collect();
                (
                    Tensor::new(grad.shape().to_vec(), data).expect("same shape"),
                    vec![],
                )
            }
            _ => unreachable!("cache kind is produced by the same layer"),
        }
    }
}

fn with_batch(batch: usize, sample: &[usize]) -> Vec<usize> {
    let mut s = vec![batch];
    s.extend_from_slice(sample);
    s
}

/// Strided row-major view: element `(r, c)` lives at `r·row + c·col`.
#[derive(Clone, Copy)]
struct Strides(usize, usize);

/// `C = A·B + beta·C` for `A: m×k`, `B: k×n`, `C: m×n` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |s: Strides, r: usize, cc: usize| (r - 1) * s.0 + (cc - 1) * s.1;
    assert!(
        k == 0 || (last(sa, m, k) < a.len() && last(sb, k, n) < b.len()),
        "gemm operand out of bounds"
    );
    assert!(last(sc, m, n) < c.len(), "gemm output out of bounds");
    // SAFETY: the asserts above bound every index the kernel touches, and
    // `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        );
    }
}

fn dense_forward(d: &Dense, x: &Tensor) -> Tensor {
    let n = x.batch();
    let (i, o) = (d.in_dim, d.out_dim);
    let mut out = vec![0.0; n * o];
    for row in out.chunks_mut(o) {
        row.copy_from_slice(&d.bias);
    }
    // Y = X·Wᵀ + b
    gemm(
        n,
        i,
        o,
        x.data(),
        Strides(i, 1),
        &d.weight,
        Strides(1, i),
        1.0,
        &mut out,
        Strides(o, 1),
    );
    Tensor::new(vec![n, o], out).expect("dense output")
}

fn dense_backward(d: &Dense, x: &Tensor, grad: &Tensor) -> (Tensor, Vec<Vec<f64>>) {
    let n = x.batch();
    let (i, o) = (d.in_dim, d.out_dim);
    let g = grad.data();
    let mut dw = vec![0.0; d.weight.len()];
    let mut db = vec![0.0; o];
    let mut dx = vec![0.0; n * i];
    for row in g.chunks(o) {
        db.iter_mut().zip(row).for_each(|(b, v)| *b += v);
    }
    // dW = Gᵀ·X, dX = G·W
    gemm(
        o,
        n,
        i,
        g,
        Strides(1, o),
        x.data(),
        Strides(i, 1),
        0.0,
        &mut dw,
        Strides(i, 1),
    );
    gemm(
        n,
        o,
        i,
        g,
        Strides(o, 1),
        &d.weight,
        Strides(i, 1),
        0.0,
        &mut dx,
        Strides(i, 1),
    );
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dense input grad"),
        vec![dw, db],
    )
}

/// Row/column offset ranges for kernel tap `k ∈ {0,1,2}` on an axis of length `len`:
/// output index range `lo..hi` reads input `idx + k − 1`.
#[inline]
fn tap_range(k: usize, len: usize) -> (usize, usize) {
    match k {
        0 => (1, len),
        1 => (0, len),
        _ => (0, len.saturating_sub(1)),
    }
}

/// Unrolls one `ci × h × w` sample into `col[(ci·9 + tap), pixel]`.
fn im2col(input: &[f64], ci_n: usize, h: usize, w: usize, col: &mut [f64]) {
    let hw = h * w;
    col.iter_mut().for_each(|v| *v = 0.0);
    for ci in 0..ci_n {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            let (ylo, yhi) = tap_range(ky, h);
            for kx in 0..3 {
                let (xlo, xhi) = tap_range(kx, w);
                if xhi <= xlo {
                    continue;
                }
                let row = &mut col[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in ylo..yhi {
                    let src = (y + ky - 1) * w + xlo + kx - 1;
                    row[y * w + xlo..y * w + xhi].copy_from_slice(&plane[src..src + xhi - xlo]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into `dx`.
fn col2im(col: &[f64], ci_n: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..ci_n {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            let (ylo, yhi) = tap_range(ky, h);
            for kx in 0..3 {
                let (xlo, xhi) = tap_range(kx, w);
                if xhi <= xlo {
                    continue;
                }
                let row = &col[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in ylo..yhi {
                    let dst = (y + ky - 1) * w + xlo + kx - 1;
                    for (d, v) in plane[dst..dst + xhi - xlo]
                        .iter_mut()
                        .zip(&row[y * w + xlo..y * w + xhi])
                    {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn conv_forward(c: &Conv2d, x: &Tensor) -> Tensor {
    let (n, h, w) = (x.batch(), x.shape()[2], x.shape()[3]);
    let hw = h * w;
    let (ci_n, co_n) = (c.in_channels, c.out_channels);
    let k = ci_n * 9;
    let mut out = vec![0.0; n * co_n * hw];
    let mut col = vec![0.0; k * hw];
    for s in 0..n {
        im2col(
            &x.data()[s * ci_n * hw..(s + 1) * ci_n * hw],
            ci_n,
            h,
            w,
            &mut col,
        );
        let o = &mut out[s * co_n * hw..(s + 1) * co_n * hw];
        for (co, plane) in o.chunks_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = c.bias[co]);
        }
        gemm(
            co_n,
            k,
            hw,
            &c.weight,
            Strides(k, 1),
            &col,
            Strides(hw, 1),
            1.0,
            o,
            Strides(hw, 1),
        );
    }
    Tensor::new(vec![n, co_n, h, w], out).expect("conv output")
}

fn conv_backward(c: &Conv2d, x: &Tensor, grad: &Tensor) -> (Tensor, Vec<Vec<f64>>) {
    let (n, h, w) = (x.batch(), x.shape()[2], x.shape()[3]);
    let hw = h * w;
    let (ci_n, co_n) = (c.in_channels, c.out_channels);
    let k = ci_n * 9;
    let mut dw = vec![0.0; c.weight.len()];
    let mut db = vec![0.0; co_n];
    let mut dx = vec![0.0; x.len()];
    let mut col = vec![0.0; k * hw];
    let mut dcol = vec![0.0; k * hw];
    for s in 0..n {
        let g = &grad.data()[s * co_n * hw..(s + 1) * co_n * hw];
        for (co, plane) in g.chunks(hw).enumerate() {
            db[co] += plane.iter().sum::<f64>();
        }
        im2col(
            &x.data()[s * ci_n * hw..(s + 1) * ci_n * hw],
            ci_n,
            h,
            w,
            &mut col,
        );
        // dW += G·colᵀ, dcol = Wᵀ·G
        gemm(
            co_n,
            hw,
            k,
            g,
            Strides(hw, 1),
            &col,
            Strides(1, hw),
            1.0,
            &mut dw,
            Strides(k, 1),
        );
        gemm(
            k,
            co_n,
            hw,
            &c.weight,
            Strides(1, k),
            g,
            Strides(hw, 1),
            0.0,
            &mut dcol,
            Strides(hw, 1),
        );
        col2im(
            &dcol,
            ci_n,
            h,
            w,
            &mut dx[s * ci_n * hw..(s + 1) * ci_n * hw],
        );
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("conv input grad"),
        vec![dw, db],
    )
}

fn pool_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (n, ch, h, w) = (x.batch(), x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(n * ch * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..n * ch {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for xx in 2 * ox..(2 * ox + 2).min(w) {
                        let idx = base + y * w + xx;
                        if x.data()[idx] > x.data()[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x.data()[best]);
                argmax.push(best);
            }
        }
    }
    (
        Tensor::new(vec![n, ch, oh, ow], out).expect("pool output"),
        argmax,
    )
}

/// Mean over each window; edge windows of odd-sized inputs average fewer cells.
fn avg_pool_forward(x: &Tensor) -> Tensor {
    let (n, ch, h, w) = (x.batch(), x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(n * ch * oh * ow);
    for plane in 0..n * ch {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let (ys, xs) = (2 * oy..(2 * oy + 2).min(h), 2 * ox..(2 * ox + 2).min(w));
                let count = (ys.len() * xs.len()) as f64;
                let mut sum = 0.0;
                for y in ys {
                    for xx in xs.clone() {
                        sum += x.data()[base + y * w + xx];
                    }
                }
                out.push(sum / count);
            }
        }
    }
    Tensor::new(vec![n, ch, oh, ow], out).expect("pool output")
}

fn avg_pool_backward(grad: &Tensor, in_shape: &[usize]) -> Tensor {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut dx = Tensor::zeros(in_shape.to_vec());
    for plane in 0..in_shape[0] * in_shape[1] {
        for oy in 0..oh {
            for ox in 0..ow {
                let (ys, xs) = (2 * oy..(2 * oy + 2).min(h), 2 * ox..(2 * ox + 2).min(w));
                let g = grad.data()[plane * oh * ow + oy * ow + ox] / (ys.len() * xs.len()) as f64;
                for y in ys {
                    for xx in xs.clone() {
                        dx.data_mut()[plane * h * w + y * w + xx] += g;
                    }
                }
            }
        }
    }
    dx
}

fn upsample_forward(x: &Tensor) -> Tensor {
    let (n, ch, h, w) = (x.batch(), x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * ch * oh * ow];
    for plane in 0..n * ch {
        for y in 0..oh {
            for xx in 0..ow {
                out[plane * oh * ow + y * ow + xx] = x.data()[plane * h * w + (y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new(vec![n, ch, oh, ow], out).expect("upsample output")
}

fn upsample_backward(grad: &Tensor, in_shape: &[usize]) -> Tensor {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = Tensor::zeros(in_shape.to_vec());
    let planes = in_shape[0] * in_shape[1];
    for plane in 0..planes {
        for y in 0..oh {
            for xx in 0..ow {
                dx.data_mut()[plane * h * w + (y / 2) * w + xx / 2] +=
                    grad.data()[plane * oh * ow + y * ow + xx];
            }
        }
    }
    dx
}

/// `(channels, spatial size)` of a batch for normalisation.
fn norm_layout(x: &Tensor) -> (usize, usize, usize) {
    let n = x.batch();
    let ch = x.shape()[1];
    let spatial = x.shape()[2..].iter().product::<usize>();
    (n, ch, spatial)
}

fn norm_forward(b: &BatchNorm, x: &Tensor, train: bool) -> (Tensor, LayerCache) {
    let (n, ch, sp) = norm_layout(x);
    let count = n * sp;
    let (mean, var) = if train {
        let mut mean = vec![0.0; ch];
        let mut var = vec![0.0; ch];
        for s in 0..n {
            for c in 0..ch {
                let block = &x.data()[(s * ch + c) * sp..(s * ch + c + 1) * sp];
                mean[c] += block.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for s in 0..n {
            for c in 0..ch {
                let block = &x.data()[(s * ch + c) * sp..(s * ch + c + 1) * sp];
                var[c] += block.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        (mean, var)
    } else {
        (b.running_mean.clone(), b.running_var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + b.eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for s in 0..n {
        for c in 0..ch {
            for k in (s * ch + c) * sp..(s * ch + c + 1) * sp {
                xhat[k] = (x.data()[k] - mean[c]) * inv_std[c];
                out[k] = b.gamma[c] * xhat[k] + b.beta[c];
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), out).expect("norm output"),
        LayerCache::Norm {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            train,
            count,
        },
    )
}

fn norm_backward(b: &BatchNorm, cache: &LayerCache, grad: &Tensor) -> (Tensor, Vec<Vec<f64>>) {
    let LayerCache::Norm {
        xhat,
        inv_std,
        train,
        count,
        ..
    } = cache
    else {
        unreachable!()
    };
    let (n, ch, sp) = norm_layout(grad);
    let g = grad.data();
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    for s in 0..n {
        for c in 0..ch {
            for k in (s * ch + c) * sp..(s * ch + c + 1) * sp {
                dgamma[c] += g[k] * xhat[k];
                dbeta[c] += g[k];
            }
        }
    }
    let m = *count as f64;
    let mut dx = vec![0.0; grad.len()];
    for s in 0..n {
        for c in 0..ch {
            let scale = b.gamma[c] * inv_std[c];
            for k in (s * ch + c) * sp..(s * ch + c + 1) * sp {
                dx[k] = if *train {
                    scale * (g[k] - dbeta[c] / m - xhat[k] * dgamma[c] / m)
                } else {
                    scale * g[k]
                };
            }
        }
    }
    (
        Tensor::new(grad.shape().to_vec(), dx).expect("norm input grad"),
        vec![dgamma, dbeta],
    )
}

pub(crate) fn sample_shape_with_batch(batch: usize, sample: &[usize]) -> Vec<usize> {
    with_batch(batch, sample)
}
