use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use yieldpaint::neural::{BatchNorm, Conv2d, Dense, Layer, Mode, Network};
use yieldpaint_bench::random_tensor;

const BATCH: usize = 32;

fn bench_net(c: &mut Criterion, name: &str, input: Vec<usize>, layers: Vec<Layer>) {
    let net = Network::new(input.clone(), layers).unwrap();
    let mut shape = vec![BATCH];
    shape.extend(input);
    let x = random_tensor(shape, 1);
    let (y, cache) = net.forward(&x, Mode::Train).unwrap();
    let g = random_tensor(y.shape().to_vec(), 2);
    c.bench_function(&format!("{name}/forward"), |b| {
        b.iter(|| net.forward(black_box(&x), Mode::Train).unwrap())
    });
    c.bench_function(&format!("{name}/backward"), |b| {
        b.iter(|| net.backward(black_box(&cache), black_box(&g)).unwrap())
    });
}

fn layers(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    bench_net(
        c,
        "dense_195x256",
        vec![195],
        vec![Layer::Dense(Dense::uniform(195, 256, 0.1, &mut rng))],
    );
    bench_net(
        c,
        "conv_16x16_3to16",
        vec![3, 16, 16],
        vec![Layer::Conv2d(Conv2d::uniform(3, 16, 0.1, &mut rng))],
    );
    bench_net(
        c,
        "conv_8x8_16to8",
        vec![16, 8, 8],
        vec![Layer::Conv2d(Conv2d::uniform(16, 8, 0.1, &mut rng))],
    );
    bench_net(c, "maxpool_16ch", vec![16, 16, 16], vec![Layer::MaxPool2x2]);
    bench_net(
        c,
        "batchnorm_16ch",
        vec![16, 16, 16],
        vec![Layer::BatchNorm(BatchNorm::new(16))],
    );
}

criterion_group!(benches, layers);
criterion_main!(benches);
