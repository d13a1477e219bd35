//! Shared fixtures for the benchmark targets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cladapter_core::interface::FeatureBlock;
use cladapter_core::numerics::Matrix;

pub fn random_block(n: usize, d: usize, seed: u64) -> FeatureBlock {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureBlock::new(Matrix::from_fn(n, d, |_, _| rng.gen_range(-2.0..2.0)))
        .expect("finite block")
}

pub fn random_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
