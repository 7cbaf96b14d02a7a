#![allow(dead_code)]

pub mod oracles;

use bicam::{Tensor, ViTConfig, VisionTransformer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny(seed: u64) -> VisionTransformer {
    VisionTransformer::init(ViTConfig::tiny(), seed).unwrap()
}

/// Uniform pixels in `[0, 1)`.
pub fn image(cfg: &ViTConfig, batch: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = batch * 3 * cfg.image_height * cfg.image_width;
    Tensor::new(
        vec![batch, 3, cfg.image_height, cfg.image_width],
        (0..n).map(|_| r.random::<f64>()).collect(),
    )
    .unwrap()
}

pub fn normal_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let d = rand_distr::StandardNormal;
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.sample::<f64, _>(d)).collect(),
    )
    .unwrap()
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
