//! Shared inputs for the benchmarks.

use pdan_core::arch::{GrowthSchedule, NetworkConfig};
use pdan_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Uniform [0, 1) tensor from a fixed seed.
pub fn input(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Two-block x2 network small enough to train inside a benchmark loop.
pub fn small_config() -> NetworkConfig {
    NetworkConfig {
        scale: 2,
        num_blocks: 2,
        trunk_channels: 32,
        growth: GrowthSchedule::new(8, 16, 8, 4),
        reduction: 8,
        ..NetworkConfig::default()
    }
}
