//! Small models and images shared by the integration tests.
#![allow(dead_code)]

use curvprobe::zoo::{ArchConfig, CnnConfig, ModelConfig, Normalization, VitConfig, ZooModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SHAPE: [usize; 3] = [3, 8, 8];
pub const DIM: usize = 3 * 8 * 8;

pub fn tiny_cnn_config() -> ModelConfig {
    ModelConfig {
        arch: ArchConfig::Cnn(CnnConfig {
            widths: vec![4, 8],
            blocks: vec![1, 1],
        }),
        input: SHAPE,
        num_classes: 3,
        normalization: Normalization {
            mean: vec![0.5, 0.4, 0.3],
            std: vec![0.25, 0.2, 0.3],
        },
    }
}

pub fn tiny_vit_config() -> ModelConfig {
    ModelConfig {
        arch: ArchConfig::Vit(VitConfig {
            patch: 4,
            embed_dim: 8,
            depth: 1,
            heads: 2,
            mlp_ratio: 2,
        }),
        input: SHAPE,
        num_classes: 3,
        normalization: Normalization::identity(3),
    }
}

pub fn tiny_cnn(seed: u64) -> ZooModel {
    ZooModel::new(tiny_cnn_config(), seed).unwrap()
}

pub fn tiny_vit(seed: u64) -> ZooModel {
    ZooModel::new(tiny_vit_config(), seed).unwrap()
}

/// Uniform pixels in `[lo, hi]`.
pub fn image(dim: usize, seed: u64, lo: f32, hi: f32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.random_range(lo..=hi)).collect()
}

/// Pixels on the dyadic lattice `k / 256` for `k` in `64..192`.
pub fn dyadic_image(dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.random_range(64..192) as f32 / 256.0).collect()
}

pub fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum::<f64>().sqrt()
}
