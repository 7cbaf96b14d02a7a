//! Untargeted L-infinity attacks: PGD with random start and momentum
//! iterative FGSM. Both ascend the summed cross-entropy of the true labels
//! and project onto the epsilon-ball and the `[0, 1]` pixel range after
//! every step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::ImageClassifier;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackMethod {
    Pgd,
    MiFgsm,
}

impl std::str::FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pgd" => Ok(AttackMethod::Pgd),
            "mi-fgsm" | "mifgsm" => Ok(AttackMethod::MiFgsm),
            other => Err(Error::param(format!("unknown attack {other:?}"))),
        }
    }
}

impl std::fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackMethod::Pgd => "pgd",
            AttackMethod::MiFgsm => "mi-fgsm",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub method: AttackMethod,
    /// L-infinity budget in `[0, 1]` pixel units.
    pub epsilon: f64,
    pub step_size: f64,
    pub num_steps: usize,
    /// MI-FGSM only.
    pub momentum_decay: f64,
    /// PGD only: start from a uniform point in the epsilon-ball.
    pub random_start: bool,
    pub seed: u64,
}

impl AttackConfig {
    /// epsilon 8/255, step 2/255, 10 steps, random start.
    pub fn pgd() -> Self {
        AttackConfig {
            method: AttackMethod::Pgd,
            epsilon: 8.0 / 255.0,
            step_size: 2.0 / 255.0,
            num_steps: 10,
            momentum_decay: 0.0,
            random_start: true,
            seed: 0,
        }
    }

    /// epsilon 8/255, step 2/255, 10 steps, momentum decay 1.
    pub fn mifgsm() -> Self {
        AttackConfig {
            method: AttackMethod::MiFgsm,
            momentum_decay: 1.0,
            random_start: false,
            ..Self::pgd()
        }
    }

    /// A zero budget is accepted and leaves the image untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::param(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.num_steps == 0 {
            return Err(Error::param("num_steps must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.momentum_decay) {
            return Err(Error::param(format!(
                "momentum decay must lie in [0, 1], got {}",
                self.momentum_decay
            )));
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn project(x: &mut Tensor, origin: &Tensor, epsilon: f64) {
    for (v, &o) in x.data_mut().iter_mut().zip(origin.data()) {
        *v = v.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0);
    }
}

fn check_inputs(image: &Tensor, labels: &[usize], cfg: &AttackConfig) -> Result<()> {
    cfg.validate()?;
    if image.shape().first() != Some(&labels.len()) {
        return Err(Error::shape(format!(
            "{} labels for image batch {:?}",
            labels.len(),
            image.shape()
        )));
    }
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::param("image pixels must lie in [0, 1]"));
    }
    Ok(())
}

/// Every iterate of the attack, starting with the (possibly randomised)
/// starting point and ending with the returned adversarial image.
pub fn attack_trajectory(
    model: &impl ImageClassifier,
    image: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Vec<Tensor>> {
    check_inputs(image, labels, cfg)?;
    let mut x = image.clone();
    if cfg.method == AttackMethod::Pgd && cfg.random_start && cfg.epsilon > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for v in x.data_mut() {
            *v += rng.random_range(-cfg.epsilon..=cfg.epsilon);
        }
        project(&mut x, image, cfg.epsilon);
    }
    let batch = labels.len();
    let per_image = image.numel() / batch;
    let mut momentum = vec![0.0; image.numel()];
    let mut trajectory = vec![x.clone()];

    for _ in 0..cfg.num_steps {
        let (_, grad) = model.loss_gradient(&x, labels)?;
        let direction: Vec<f64> = match cfg.method {
            AttackMethod::Pgd => grad.data().to_vec(),
            AttackMethod::MiFgsm => {
                for (acc, g) in momentum
                    .chunks_mut(per_image)
                    .zip(grad.data().chunks(per_image))
                {
                    let l1: f64 = g.iter().map(|v| v.abs()).sum();
                    let norm = if l1 > 0.0 { l1 } else { 1.0 };
                    for (a, gi) in acc.iter_mut().zip(g) {
                        *a = cfg.momentum_decay * *a + gi / norm;
                    }
                }
                momentum.clone()
            }
        };
        for (v, d) in x.data_mut().iter_mut().zip(&direction) {
            *v += cfg.step_size * sign(*d);
        }
        project(&mut x, image, cfg.epsilon);
        trajectory.push(x.clone());
    }
    Ok(trajectory)
}

pub fn pgd_attack(
    model: &impl ImageClassifier,
    image: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Tensor> {
    let cfg = AttackConfig {
        method: AttackMethod::Pgd,
        ..cfg.clone()
    };
    Ok(attack_trajectory(model, image, labels, &cfg)?
        .pop()
        .expect("non-empty"))
}

pub fn mifgsm_attack(
    model: &impl ImageClassifier,
    image: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Tensor> {
    let cfg = AttackConfig {
        method: AttackMethod::MiFgsm,
        ..cfg.clone()
    };
    Ok(attack_trajectory(model, image, labels, &cfg)?
        .pop()
        .expect("non-empty"))
}

/// Dispatches on `cfg.method`.
pub fn attack(
    model: &impl ImageClassifier,
    image: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Tensor> {
    Ok(attack_trajectory(model, image, labels, cfg)?
        .pop()
        .expect("non-empty"))
}
