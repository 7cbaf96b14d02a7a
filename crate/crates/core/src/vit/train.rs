//! Synthetic two-class data and a short Adam loop, enough to give a desk-scale
//! model real decision boundaries for attacks and perturbation curves.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ViTConfig, VisionTransformer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch_size: 16,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

/// Blob images: a coloured square at a random position on a noisy grey
/// background. Class 0 blobs shift red up and blue down by `contrast`;
/// class 1 blobs do the opposite. Labels alternate `0, 1, 0, ...`.
/// Returns `[count, 3, H, W]` and the labels.
pub fn synthetic_blobs(
    height: usize,
    width: usize,
    count: usize,
    contrast: f64,
    seed: u64,
) -> (Tensor, Vec<usize>) {
    let set = blob_dataset(height, width, count, contrast, seed);
    (set.images, set.labels)
}

/// Square blob placement: top-left corner and side length in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlobBox {
    pub top: usize,
    pub left: usize,
    pub side: usize,
}

impl BlobBox {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.side).contains(&y)
            && (self.left..self.left + self.side).contains(&x)
    }
}

#[derive(Clone, Debug)]
pub struct BlobSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub boxes: Vec<BlobBox>,
}

/// [`synthetic_blobs`] together with where each blob was placed.
pub fn blob_dataset(
    height: usize,
    width: usize,
    count: usize,
    contrast: f64,
    seed: u64,
) -> BlobSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (height.min(width) / 2).max(1);
    let mut data = Vec::with_capacity(count * 3 * height * width);
    let mut labels = Vec::with_capacity(count);
    let mut boxes = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % 2;
        let bx = BlobBox {
            top: rng.random_range(0..=height - side),
            left: rng.random_range(0..=width - side),
            side,
        };
        let polarity = if label == 0 { 1.0 } else { -1.0 };
        let shift = [polarity * contrast, 0.0, -polarity * contrast];
        for blob in shift {
            for y in 0..height {
                for x in 0..width {
                    let noise = rng.random_range(-0.05..0.05);
                    let v = 0.5 + noise + if bx.contains(y, x) { blob } else { 0.0 };
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        labels.push(label);
        boxes.push(bx);
    }
    let images = Tensor::new(vec![count, 3, height, width], data).expect("blob shape");
    BlobSet {
        images,
        labels,
        boxes,
    }
}

/// A fixed recipe for a small, confidently trained two-class model: the
/// tiny config fitted to blob images. Deterministic for fixed seeds.
#[derive(Clone, Debug)]
pub struct ToyRecipe {
    pub config: ViTConfig,
    pub model_seed: u64,
    pub data_seed: u64,
    pub train_images: usize,
    pub contrast: f64,
    pub train: TrainConfig,
}

impl Default for ToyRecipe {
    fn default() -> Self {
        ToyRecipe {
            config: ViTConfig::tiny(),
            model_seed: 7,
            data_seed: 1,
            train_images: 16,
            contrast: 0.1,
            train: TrainConfig {
                steps: 300,
                batch_size: 16,
                learning_rate: 5e-4,
                seed: 2,
            },
        }
    }
}

impl ToyRecipe {
    /// Trains a fresh model; returns it with the per-step losses.
    pub fn fit(&self) -> Result<(VisionTransformer, Vec<f64>)> {
        let mut model = VisionTransformer::init(self.config.clone(), self.model_seed)?;
        let (images, labels) = synthetic_blobs(
            self.config.image_height,
            self.config.image_width,
            self.train_images,
            self.contrast,
            self.data_seed,
        );
        let losses = train(&mut model, &images, &labels, &self.train)?;
        Ok((model, losses))
    }

    /// Held-out blob images drawn from the same distribution.
    pub fn test_set(&self, count: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let set = self.test_blobs(count, seed);
        (set.images, set.labels)
    }

    /// [`ToyRecipe::test_set`] with blob placements.
    pub fn test_blobs(&self, count: usize, seed: u64) -> BlobSet {
        blob_dataset(
            self.config.image_height,
            self.config.image_width,
            count,
            self.contrast,
            seed,
        )
    }
}

/// Minibatch Adam on mean cross-entropy with a short linear warmup.
/// Returns the per-step mean loss.
pub fn train(
    model: &mut VisionTransformer,
    images: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let n = images.shape().first().copied().unwrap_or(0);
    if n == 0 || labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for {n} training images",
            labels.len()
        )));
    }
    let batch = cfg.batch_size.clamp(1, n);
    // Linear warmup over the first tenth of the run; without it the tiny
    // models tend to spike and collapse to a constant prediction.
    let warmup = (cfg.steps / 10).max(1);
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let names: Vec<String> = model.weights().names().map(str::to_string).collect();
    let mut m: Vec<Vec<f64>> = names
        .iter()
        .map(|k| vec![0.0; model.weights().get(k).numel()])
        .collect();
    let mut v = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let picks = index::sample(&mut rng, n, batch).into_vec();
        let parts: Vec<Tensor> = picks.iter().map(|&i| images.index_axis0(i)).collect();
        let batch_labels: Vec<usize> = picks.iter().map(|&i| labels[i]).collect();
        let x = Tensor::stack(&parts)?;

        let mut pass = model.forward(&x, false)?;
        let loss = model.backward_cross_entropy(&mut pass, &batch_labels)?;
        losses.push(loss / batch as f64);

        let lr = cfg.learning_rate * (step as f64 / warmup as f64).min(1.0);
        let bc1 = 1.0 - beta1.powi(step as i32);
        let bc2 = 1.0 - beta2.powi(step as i32);
        for (i, name) in names.iter().enumerate() {
            let grad = pass.parameter_gradient(name).expect("parameter on graph");
            let w = model.weights_mut().get_mut(name).expect("named weight");
            for (j, (wj, gj)) in w.data_mut().iter_mut().zip(grad.data()).enumerate() {
                let g = gj / batch as f64;
                m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
                v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
                *wj -= lr * (m[i][j] / bc1) / ((v[i][j] / bc2).sqrt() + eps);
            }
        }
    }
    Ok(losses)
}
