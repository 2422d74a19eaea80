//! Central finite-difference gradient checks for single layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yieldpaint::neural::{BatchNorm, Conv2d, Dense, Layer, Mode, Network, Tensor};

pub const STEP: f64 = 1e-5;
pub const INSTANCES: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Dense,
    Conv2d,
    MaxPool,
    AvgPool,
    Upsample,
    BatchNormTrain,
    BatchNormInfer,
    Relu,
    Sigmoid,
}

pub const ALL_KINDS: [Kind; 9] = [
    Kind::Dense,
    Kind::Conv2d,
    Kind::MaxPool,
    Kind::AvgPool,
    Kind::Upsample,
    Kind::BatchNormTrain,
    Kind::BatchNormInfer,
    Kind::Relu,
    Kind::Sigmoid,
];

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-14 {
        0.0
    } else {
        diff / scale
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values bounded away from zero so ReLU kinks sit outside the FD stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Distinct values on a 1e-2 lattice, shuffled, so every pooling window has a
/// clear winner.
fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|k| k as f64 * 0.01 - 0.5).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
    v
}

/// Builds a one-layer network and an input batch for instance `seed`.
pub fn instance(kind: Kind, seed: u64) -> (Network, Tensor, Mode) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed * 131 + kind as u64);
    let batch = rng.gen_range(2..=4);
    let (ch, h, w) = (
        rng.gen_range(1..=3),
        rng.gen_range(2..=5),
        rng.gen_range(2..=5),
    );
    let spatial = vec![ch, h, w];
    let (shape, layer, mode, data): (Vec<usize>, Layer, Mode, Vec<f64>) = match kind {
        Kind::Dense => {
            let (i, o) = (5, rng.gen_range(1..=6));
            let mut d = Dense::uniform(i, o, 0.8, &mut rng);
            d.bias = uniform_vec(&mut rng, o, -0.5, 0.5);
            (
                vec![i],
                Layer::Dense(d),
                Mode::Train,
                uniform_vec(&mut rng, batch * i, -1.0, 1.0),
            )
        }
        Kind::Conv2d => {
            let co = rng.gen_range(1..=3);
            let mut c = Conv2d::uniform(ch, co, 0.8, &mut rng);
            c.bias = uniform_vec(&mut rng, co, -0.5, 0.5);
            let n = batch * ch * h * w;
            (
                spatial,
                Layer::Conv2d(c),
                Mode::Train,
                uniform_vec(&mut rng, n, -1.0, 1.0),
            )
        }
        Kind::MaxPool => {
            let n = batch * ch * h * w;
            (
                spatial,
                Layer::MaxPool2x2,
                Mode::Train,
                distinct(&mut rng, n),
            )
        }
        Kind::AvgPool => {
            let n = batch * ch * h * w;
            (
                spatial,
                Layer::AvgPool2x2,
                Mode::Train,
                uniform_vec(&mut rng, n, -1.0, 1.0),
            )
        }
        Kind::Upsample => {
            let n = batch * ch * h * w;
            (
                spatial,
                Layer::Upsample2x2,
                Mode::Train,
                uniform_vec(&mut rng, n, -1.0, 1.0),
            )
        }
        Kind::BatchNormTrain | Kind::BatchNormInfer => {
            let dense = rng.gen_bool(0.5);
            let shape = if dense { vec![5] } else { spatial };
            let f = shape[0];
            let mut b = BatchNorm::new(f);
            b.gamma = uniform_vec(&mut rng, f, 0.5, 1.5);
            b.beta = uniform_vec(&mut rng, f, -0.5, 0.5);
            b.running_mean = uniform_vec(&mut rng, f, -0.2, 0.2);
            b.running_var = uniform_vec(&mut rng, f, 0.5, 2.0);
            let n = batch * shape.iter().product::<usize>();
            let mode = if kind == Kind::BatchNormTrain {
                Mode::Train
            } else {
                Mode::Infer
            };
            (
                shape,
                Layer::BatchNorm(b),
                mode,
                uniform_vec(&mut rng, n, -1.0, 1.0),
            )
        }
        Kind::Relu => {
            let n = batch * 5;
            (
                vec![5],
                Layer::relu(),
                Mode::Train,
                away_from_zero(&mut rng, n),
            )
        }
        Kind::Sigmoid => {
            let n = batch * ch * h * w;
            (
                spatial,
                Layer::sigmoid(),
                Mode::Train,
                uniform_vec(&mut rng, n, -3.0, 3.0),
            )
        }
    };
    let mut full = vec![batch];
    full.extend_from_slice(&shape);
    let net = Network::new(shape, vec![layer]).expect("valid single-layer net");
    (net, Tensor::new(full, data).expect("input"), mode)
}

fn weighted_loss(net: &Network, x: &Tensor, mode: Mode, r: &[f64]) -> f64 {
    let (y, _) = net.forward(x, mode).expect("forward");
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Largest relative error over the input gradient and every parameter tensor,
/// for the loss `Σ rᵢ·yᵢ` with random weights `r`.
pub fn check(net: &Network, x: &Tensor, mode: Mode, seed: u64) -> f64 {
    let (y, cache) = net.forward(x, mode).expect("forward");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = uniform_vec(&mut rng, y.len(), -1.0, 1.0);
    let grads = net
        .backward(&cache, &Tensor::new(y.shape().to_vec(), r.clone()).unwrap())
        .expect("backward");

    let mut worst = 0.0f64;
    let mut fd_input = vec![0.0; x.len()];
    for k in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[k] += STEP;
        let mut minus = x.clone();
        minus.data_mut()[k] -= STEP;
        fd_input[k] = (weighted_loss(net, &plus, mode, &r) - weighted_loss(net, &minus, mode, &r))
            / (2.0 * STEP);
    }
    worst = worst.max(relative_error(grads.input.data(), &fd_input));

    let sizes: Vec<usize> = net.parameters().iter().map(|p| p.len()).collect();
    for (t, &len) in sizes.iter().enumerate() {
        let mut fd = vec![0.0; len];
        for k in 0..len {
            let mut probe = net.clone();
            probe.parameters_mut()[t][k] += STEP;
            let up = weighted_loss(&probe, x, mode, &r);
            probe.parameters_mut()[t][k] -= 2.0 * STEP;
            let down = weighted_loss(&probe, x, mode, &r);
            fd[k] = (up - down) / (2.0 * STEP);
        }
        worst = worst.max(relative_error(&grads.params[t], &fd));
    }
    worst
}

/// Worst relative error over all instances of one layer kind.
pub fn worst_for_kind(kind: Kind) -> f64 {
    (0..INSTANCES)
        .map(|s| {
            let (net, x, mode) = instance(kind, s);
            check(&net, &x, mode, s)
        })
        .fold(0.0, f64::max)
}
