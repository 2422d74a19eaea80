//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yieldpaint::neural::Tensor;
use yieldpaint::synthetic::generate_synthetic;
use yieldpaint::{CorruptionSpec, MaskedSurface, SurfaceDataset, SyntheticConfig};

/// Unit-scaled synthetic surfaces.
pub fn surfaces(n: usize) -> SurfaceDataset {
    generate_synthetic(&SyntheticConfig::default(), n)
        .and_then(|d| d.scale_to_unit())
        .expect("default synthetic config is valid")
}

/// The first surface of a fresh dataset, masked by `spec`.
pub fn masked(spec: CorruptionSpec) -> MaskedSurface {
    let data = surfaces(1);
    spec.apply(data.surfaces()[0].values())
        .expect("spec fits the default grid")
}

pub fn uniform_075() -> MaskedSurface {
    masked(CorruptionSpec::uniform(0.75, 11))
}

pub fn block_075() -> MaskedSurface {
    masked(CorruptionSpec::quadrant(13, 15, 0.75, 11))
}

pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("shape matches data")
}
