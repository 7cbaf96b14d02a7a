//! The minimal model surface shared by attacks and perturbation evaluation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A differentiable image classifier over `[B, 3, H, W]` batches in `[0, 1]`.
pub trait ImageClassifier: Sync {
    fn num_classes(&self) -> usize;

    /// Raw class scores, `[B, num_classes]`.
    fn logits(&self, images: &Tensor) -> Result<Tensor>;

    /// Summed cross-entropy over the batch and its gradient with respect to
    /// `images`.
    fn loss_gradient(&self, images: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)>;
}

/// Row-wise softmax of `[B, C]` logits.
pub fn probabilities(logits: &Tensor) -> Result<Tensor> {
    crate::tensor::softmax(logits, 1.0)
}

/// Summed cross-entropy of `[B, C]` logits against `labels`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let &[batch, classes] = logits.shape() else {
        return Err(Error::shape(format!(
            "logits of shape {:?}",
            logits.shape()
        )));
    };
    if labels.len() != batch {
        return Err(Error::shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &y) in logits.data().chunks(classes).zip(labels) {
        if y >= classes {
            return Err(Error::param(format!("class {y} out of range 0..{classes}")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total)
}

/// Index of the largest logit in each row; first index wins ties.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let classes = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}
