mod common;

use bicam::adversarial::{attack, attack_trajectory, pgd_attack, AttackConfig, AttackMethod};
use bicam::classifier::cross_entropy;
use bicam::eval::LinearPatchModel;
use bicam::vit::train::ToyRecipe;
use bicam::{ImageClassifier, Tensor};
use common::{image, rng, tiny};
use proptest::prelude::*;
use rand::Rng;

fn linear_model(seed: u64) -> LinearPatchModel {
    let mut r = rng(seed);
    let coef = Tensor::new(
        vec![4, 4],
        (0..16).map(|_| r.random_range(-2.0..2.0)).collect(),
    )
    .unwrap();
    LinearPatchModel::new(coef, 16, 16).unwrap()
}

fn pixels(batch: usize, seed: u64) -> Tensor {
    image(&bicam::ViTConfig::tiny(), batch, seed)
}

fn within_budget(x: &Tensor, origin: &Tensor, eps: f64) -> bool {
    x.data()
        .iter()
        .zip(origin.data())
        .all(|(&v, &o)| (v - o).abs() <= eps + 1e-15 && (0.0..=1.0).contains(&v))
}

#[test]
fn zero_budget_is_identity() {
    let m = tiny(41);
    let x = pixels(2, 1);
    for mut cfg in [AttackConfig::pgd(), AttackConfig::mifgsm()] {
        cfg.epsilon = 0.0;
        assert_eq!(attack(&m, &x, &[0, 1], &cfg).unwrap(), x);
    }
}

#[test]
fn single_step_without_start_is_fgsm() {
    let m = tiny(42);
    let x = pixels(1, 2);
    let eps = 4.0 / 255.0;
    let cfg = AttackConfig {
        epsilon: eps,
        step_size: eps,
        num_steps: 1,
        random_start: false,
        ..AttackConfig::pgd()
    };
    let adv = pgd_attack(&m, &x, &[1], &cfg).unwrap();
    let (_, g) = m.loss_gradient(&x, &[1]).unwrap();
    for ((a, o), gi) in adv.data().iter().zip(x.data()).zip(g.data()) {
        let want = (o + eps * gi.signum() * f64::from(u8::from(*gi != 0.0))).clamp(0.0, 1.0);
        assert_eq!(*a, want);
    }
}

#[test]
fn momentum_free_mifgsm_equals_plain_steps() {
    let m = tiny(43);
    let x = pixels(2, 3);
    let base = AttackConfig {
        num_steps: 5,
        random_start: false,
        ..AttackConfig::pgd()
    };
    let mi = AttackConfig {
        method: AttackMethod::MiFgsm,
        momentum_decay: 0.0,
        ..base.clone()
    };
    assert_eq!(
        attack(&m, &x, &[0, 1], &base).unwrap(),
        attack(&m, &x, &[0, 1], &mi).unwrap()
    );
}

#[test]
fn linear_model_loss_never_decreases() {
    let m = linear_model(5);
    let x = pixels(3, 4);
    let labels = [0, 1, 1];
    for cfg in [
        AttackConfig {
            num_steps: 20,
            ..AttackConfig::pgd()
        },
        AttackConfig {
            num_steps: 20,
            ..AttackConfig::mifgsm()
        },
    ] {
        let traj = attack_trajectory(&m, &x, &labels, &cfg).unwrap();
        assert_eq!(traj.len(), 21);
        let losses: Vec<f64> = traj
            .iter()
            .map(|t| cross_entropy(&m.logits(t).unwrap(), &labels).unwrap())
            .collect();
        for w in losses.windows(2) {
            assert!(w[1] >= w[0], "{:?}: {losses:?}", cfg.method);
        }
        assert!(losses[20] > losses[0]);
    }
}

#[test]
fn attacks_raise_the_loss_of_a_trained_model() {
    let recipe = ToyRecipe::default();
    let (m, _) = recipe.fit().unwrap();
    let (x, y) = recipe.test_set(8, 77);
    let before = cross_entropy(&m.logits(&x).unwrap(), &y).unwrap();
    for cfg in [AttackConfig::pgd(), AttackConfig::mifgsm()] {
        let adv = attack(&m, &x, &y, &cfg).unwrap();
        assert!(within_budget(&adv, &x, cfg.epsilon));
        let after = cross_entropy(&m.logits(&adv).unwrap(), &y).unwrap();
        assert!(after >= before, "{:?}: {before} -> {after}", cfg.method);
    }
}

#[test]
fn seeded_random_start_is_deterministic() {
    let m = linear_model(6);
    let x = pixels(1, 5);
    let cfg = AttackConfig {
        seed: 9,
        ..AttackConfig::pgd()
    };
    let a = attack(&m, &x, &[0], &cfg).unwrap();
    assert_eq!(a, attack(&m, &x, &[0], &cfg).unwrap());
    let first = |seed| {
        attack_trajectory(
            &m,
            &x,
            &[0],
            &AttackConfig {
                seed,
                ..cfg.clone()
            },
        )
        .unwrap()
        .remove(0)
    };
    assert_ne!(first(9), first(10));
}

#[test]
fn bad_inputs_are_rejected() {
    let m = linear_model(7);
    let x = pixels(2, 6);
    assert!(attack(&m, &x, &[0], &AttackConfig::pgd()).is_err());
    let mut out_of_range = x.clone();
    out_of_range.data_mut()[0] = 1.5;
    assert!(attack(&m, &out_of_range, &[0, 1], &AttackConfig::pgd()).is_err());
    let neg = AttackConfig {
        epsilon: -0.1,
        ..AttackConfig::pgd()
    };
    assert!(attack(&m, &x, &[0, 1], &neg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_iterate_respects_the_constraints(
        seed in any::<u64>(),
        eps in 0.0f64..0.2,
        step in 0.001f64..0.1,
        steps in 1usize..8,
        mi in any::<bool>(),
        decay in 0.0f64..=1.0,
        start in any::<bool>(),
    ) {
        let m = linear_model(seed);
        let x = pixels(2, seed ^ 1);
        let cfg = AttackConfig {
            method: if mi { AttackMethod::MiFgsm } else { AttackMethod::Pgd },
            epsilon: eps,
            step_size: step,
            num_steps: steps,
            momentum_decay: decay,
            random_start: start,
            seed,
        };
        for it in attack_trajectory(&m, &x, &[1, 0], &cfg).unwrap() {
            prop_assert!(within_budget(&it, &x, eps));
        }
    }
}

#[test]
fn vit_iterates_respect_the_constraints() {
    let m = tiny(44);
    let x = pixels(1, 7);
    for cfg in [AttackConfig::pgd(), AttackConfig::mifgsm()] {
        for it in attack_trajectory(&m, &x, &[0], &cfg).unwrap() {
            assert!(within_budget(&it, &x, cfg.epsilon));
        }
    }
}
