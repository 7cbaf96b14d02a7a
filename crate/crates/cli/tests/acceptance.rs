//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the report reads top to bottom; exits nonzero on any failure.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use bicam::adversarial::{attack, AttackConfig};
use bicam::attribution::{
    aggregate_masks, attribution_alpha, bicam, map_from_captures, split_channels, tokens_to_grid,
    BicamOptions, Upsample,
};
use bicam::classifier::{argmax_rows, probabilities};
use bicam::eval::{
    binarize, evaluate_bidirectional, faithfulness, localization_metrics,
    random_baseline_faithfulness, BinaryMask, Channel, FaithfulnessReport, LinearPatchModel,
};
use bicam::io::netpbm::encode_ppm;
use bicam::pnr::{pnr, pnr_of_scores, roc_analysis, Direction, Label, PnrRecord};
use bicam::vit::train::ToyRecipe;
use bicam::vit::{default_layer_window, ForwardOptions, DEFAULT_TEMPERATURE};
use bicam::{ImageClassifier, LayerCapture, Tensor, ViTConfig, VisionTransformer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny(seed: u64) -> VisionTransformer {
    VisionTransformer::init(ViTConfig::tiny(), seed).unwrap()
}

fn uniform(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random::<f64>()).collect()).unwrap()
}

fn normal(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| r.sample::<f64, _>(rand_distr::StandardNormal))
            .collect(),
    )
    .unwrap()
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Relative error with a floor on the denominator, so entries that are
/// zero up to rounding are judged on absolute error.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

const FD_STEP: f64 = 1e-5;

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let m = tiny(101);
    let cfg = m.config().clone();
    let x = uniform(&[1, 3, 16, 16], &mut rng(102));
    let class = 1;
    let mut pass = m
        .forward_with(
            &x,
            &ForwardOptions {
                capture: true,
                window: Some(cfg.num_layers),
                cls_offset: None,
            },
        )
        .map_err(|e| e.to_string())?;
    m.backward_class(&mut pass, class)
        .map_err(|e| e.to_string())?;
    let logit = |img: &Tensor, opts: &ForwardOptions| {
        m.forward_with(img, opts).unwrap().logits().get(&[0, class])
    };

    let grad = pass.input_gradient().unwrap();
    let mut worst_input = 0.0f64;
    for i in 0..x.numel() {
        let mut up = x.clone();
        up.data_mut()[i] += FD_STEP;
        let mut down = x.clone();
        down.data_mut()[i] -= FD_STEP;
        let none = ForwardOptions::default();
        let fd = (logit(&up, &none) - logit(&down, &none)) / (2.0 * FD_STEP);
        worst_input = worst_input.max(rel_err(grad.data()[i], fd));
    }

    let mut worst_cls = 0.0f64;
    for cap in pass.captures() {
        let g = cap.cls_out_grad.as_ref().unwrap();
        for j in 0..cfg.embed_dim {
            let probe = |delta: f64| {
                let mut off = Tensor::zeros(&[1, cfg.embed_dim]);
                off.set(&[0, j], delta);
                logit(
                    &x,
                    &ForwardOptions {
                        capture: false,
                        window: None,
                        cls_offset: Some((cap.layer, off)),
                    },
                )
            };
            let fd = (probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP);
            worst_cls = worst_cls.max(rel_err(g.get(&[0, j]), fd));
        }
    }
    let took = start.elapsed();
    let detail = format!(
        "max rel err input {worst_input:.2e}, o_cls over {} layers {worst_cls:.2e} (< 1e-4); {:.1}s (< 30s)",
        pass.captures().len(),
        took.as_secs_f64()
    );
    check(
        worst_input < 1e-4 && worst_cls < 1e-4 && took < Duration::from_secs(30),
        || detail.clone(),
    )?;
    Ok(detail)
}

/// Plain loops over heads, tokens and head dims for one layer.
fn loop_mask(cap: &LayerCapture, t: f64) -> Vec<f64> {
    let s = cap.values.shape();
    let (h, n, dh) = (s[1], s[2], s[3]);
    let grad = cap.cls_out_grad.as_ref().unwrap();
    let mut out = vec![0.0; n];
    for head in 0..h {
        let row: Vec<f64> = (0..n)
            .map(|k| cap.attn_logits.get(&[0, head, 0, k]) / t)
            .collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for k in 0..n {
            let mut dot = 0.0;
            for j in 0..dh {
                dot += cap.values.get(&[0, head, k, j]) * grad.get(&[0, head * dh + j]);
            }
            out[k] += dot * (row[k] - max).exp() / z;
        }
    }
    out
}

fn decomposition() -> Outcome {
    let m = tiny(201);
    let cfg = m.config().clone();
    let l = cfg.num_layers;
    let x = uniform(&[1, 3, 16, 16], &mut rng(202));
    let class = 0;
    let mut pass = m
        .forward_with(
            &x,
            &ForwardOptions {
                capture: true,
                window: Some(l),
                cls_offset: None,
            },
        )
        .map_err(|e| e.to_string())?;
    m.backward_class(&mut pass, class)
        .map_err(|e| e.to_string())?;
    let caps = pass.into_captures();
    let t = cfg.temperature;
    let per_layer: Vec<Vec<f64>> = caps.iter().map(|c| loop_mask(c, t)).collect();
    let mut worst = 0.0f64;
    let windows = [1, (2 * l).div_ceil(3), l];
    for w in windows {
        let map = bicam(
            &m,
            &x,
            class,
            &BicamOptions {
                window: Some(w),
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let mut sum = vec![0.0; cfg.num_tokens()];
        for mask in &per_layer[l - w..] {
            sum.iter_mut().zip(mask).for_each(|(s, v)| *s += v);
        }
        let grid = tokens_to_grid(
            &Tensor::new(vec![1, cfg.num_tokens()], sum).unwrap(),
            1,
            cfg.grid(),
        )
        .unwrap();
        for (a, b) in map.patch_scores.data().iter().zip(grid.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    let last = aggregate_masks(std::slice::from_ref(caps.last().unwrap()), t).unwrap();
    let last = tokens_to_grid(&last, 1, cfg.grid()).unwrap();
    let one = bicam(
        &m,
        &x,
        class,
        &BicamOptions {
            window: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    let exact = one
        .patch_scores
        .data()
        .iter()
        .zip(last.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let detail = format!("windows {windows:?}: max abs diff {worst:.1e} (<= 1e-12); window 1 bitwise equal to final layer: {exact}");
    check(worst <= 1e-12 && exact, || detail.clone())?;
    Ok(detail)
}

fn sign_preservation() -> Outcome {
    // Two heads, three tokens, d_h = 1; uniform attention and values whose
    // product with the gradient changes sign between tokens.
    let cap = LayerCapture {
        layer: 1,
        attn_logits: Tensor::new(vec![1, 2, 3, 3], vec![0.0; 18]).unwrap(),
        values: Tensor::new(vec![1, 2, 3, 1], vec![0.0, 2.0, -1.0, 0.0, 1.0, -3.0]).unwrap(),
        cls_out: Tensor::zeros(&[1, 2]),
        cls_out_grad: Some(Tensor::new(vec![1, 2], vec![1.0, 0.5]).unwrap()),
    };
    let cfg = ViTConfig {
        image_width: 8,
        ..ViTConfig::new(4, 4, 1, 2, 2, 4, 2)
    };
    let m = VisionTransformer::init(cfg, 0).unwrap();
    let map =
        map_from_captures(&m, &[cap], 0, 2.0, Upsample::Nearest).map_err(|e| e.to_string())?;
    let s = map.patch_scores.data();
    let (has_pos, has_neg) = (s.iter().any(|&v| v > 0.0), s.iter().any(|&v| v < 0.0));
    let (pos, neg) = split_channels(&map.heatmap);
    let back = pos.zip_map(&neg, |p, n| p - n).unwrap();
    let bitwise = back
        .data()
        .iter()
        .zip(map.heatmap.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let detail = format!("patch scores {s:?}; positive {has_pos}, negative {has_neg}, split reconstructs bitwise {bitwise}");
    check(has_pos && has_neg && bitwise, || detail.clone())?;
    Ok(detail)
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

fn temperature() -> Outcome {
    let mut r = rng(401);
    let caps: Vec<LayerCapture> = (0..100)
        .map(|_| LayerCapture {
            layer: 1,
            attn_logits: normal(&[1, 2, 17, 17], &mut r),
            values: Tensor::zeros(&[1, 2, 17, 8]),
            cls_out: Tensor::zeros(&[1, 16]),
            cls_out_grad: None,
        })
        .collect();
    let mean_entropy = |t: f64| {
        let mut total = 0.0;
        let mut rows = 0;
        for c in &caps {
            let a = attribution_alpha(c, t).unwrap();
            for row in a.data().chunks(17) {
                total += entropy(row);
                rows += 1;
            }
        }
        total / rows as f64
    };
    let (h1, h2, h3) = (mean_entropy(1.0), mean_entropy(2.0), mean_entropy(3.0));
    let tiny_cfg = ViTConfig::tiny();
    let defaults = DEFAULT_TEMPERATURE == 2.0
        && tiny_cfg.temperature == 2.0
        && tiny_cfg.layer_window == 3
        && default_layer_window(12) == 8
        && default_layer_window(4) == 3;
    let detail = format!("mean entropy T=1 {h1:.4} < T=2 {h2:.4} < T=3 {h3:.4}; defaults T=2, window round(2L/3): {defaults}");
    check(h3 > h2 && h2 > h1 && defaults, || detail.clone())?;
    Ok(detail)
}

fn pnr_oracle() -> Outcome {
    let eps = 1e-8;
    let mut r = rng(501);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(1..200);
        let m: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let (a, b) = (pnr_of_scores(&m, eps).unwrap(), oracles::pnr(&m, eps));
        worst = worst.max((a - b).abs() / b.max(1.0));
    }
    let w1 = pnr_of_scores(&[1.0, 1.0, -1.0], eps).unwrap();
    let w2 = pnr_of_scores(&[0.5, 0.25, 0.0], eps).unwrap();
    let worked = w1 == 2.0 / (1.0 + eps) && w2 == 0.75 / eps;
    let detail = format!("max scaled diff vs two-loop oracle {worst:.1e} (<= 1e-12); [1,1,-1] -> {w1}, all-positive -> {w2:e} = 0.75/eps: {worked}");
    check(worst <= 1e-12 && worked, || detail.clone())?;
    Ok(detail)
}

fn detection_statistics() -> Outcome {
    let mut r = rng(601);
    let (mut auroc_ok, mut aupr_worst, mut youden_ok) = (true, 0.0f64, true);
    for _ in 0..200 {
        let nc = r.random_range(1..40);
        let na = r.random_range(1..40);
        let coarse = r.random_bool(0.5);
        let mut draw = |shift: f64| {
            let v: f64 = r.random_range(0.0..1.0) + shift;
            if coarse {
                (v * 8.0).round() / 8.0
            } else {
                v
            }
        };
        let clean: Vec<f64> = (0..nc).map(|_| draw(0.0)).collect();
        let adv: Vec<f64> = (0..na).map(|_| draw(0.3)).collect();
        let recs: Vec<PnrRecord> = clean
            .iter()
            .enumerate()
            .map(|(i, &p)| PnrRecord::new(format!("c{i}"), Label::Clean, p))
            .chain(
                adv.iter()
                    .enumerate()
                    .map(|(i, &p)| PnrRecord::new(format!("a{i}"), Label::Adversarial, p)),
            )
            .collect();
        let rep = roc_analysis(&recs, Direction::HigherIsAdversarial).map_err(|e| e.to_string())?;
        auroc_ok &= rep.auroc == oracles::auroc(&clean, &adv);
        aupr_worst = aupr_worst.max((rep.aupr - oracles::aupr(&clean, &adv)).abs());
        let best = oracles::youden_j(&clean, &adv, rep.threshold);
        youden_ok &= (rep.sensitivity + rep.specificity - 1.0 - best).abs() < 1e-12;
        for &t in clean.iter().chain(&adv) {
            youden_ok &= oracles::youden_j(&clean, &adv, t) <= best + 1e-12;
        }
    }
    let detail = format!("200 sets: AUROC exact {auroc_ok}; AUPR max diff {aupr_worst:.1e} (<= 1e-12); Youden optimal over all thresholds {youden_ok}");
    check(auroc_ok && aupr_worst <= 1e-12 && youden_ok, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn directional_delta_pnr() -> Outcome {
    let recipe = ToyRecipe::default();
    let (m, losses) = recipe.fit().map_err(|e| e.to_string())?;
    let (x, y) = recipe.test_set(32, 99);
    let p_true = |imgs: &Tensor| {
        let p = probabilities(&m.logits(imgs).unwrap()).unwrap();
        y.iter()
            .enumerate()
            .map(|(b, &c)| p.get(&[b, c]))
            .sum::<f64>()
            / y.len() as f64
    };
    let before = p_true(&x);
    // Query class: the clean prediction, shared by each clean/adversarial pair.
    let classes = argmax_rows(&m.logits(&x).unwrap());
    let clean_pnr = |b: usize| {
        let img = Tensor::stack(&[x.index_axis0(b)]).unwrap();
        pnr(
            &bicam(&m, &img, classes[b], &BicamOptions::default()).unwrap(),
            1e-8,
        )
        .unwrap()[0]
    };
    let clean: Vec<f64> = (0..y.len()).map(clean_pnr).collect();
    let mut parts = vec![format!("{} steps", losses.len())];
    let mut ok = true;
    for cfg in [AttackConfig::pgd(), AttackConfig::mifgsm()] {
        let adv = attack(&m, &x, &y, &cfg).map_err(|e| e.to_string())?;
        let after = p_true(&adv);
        let mut recs = Vec::new();
        for b in 0..y.len() {
            let img = Tensor::stack(&[adv.index_axis0(b)]).unwrap();
            let p = pnr(
                &bicam(&m, &img, classes[b], &BicamOptions::default()).unwrap(),
                1e-8,
            )
            .unwrap()[0];
            recs.push(PnrRecord::new(b.to_string(), Label::Clean, clean[b]));
            recs.push(PnrRecord::new(b.to_string(), Label::Adversarial, p));
        }
        let rep = roc_analysis(&recs, Direction::HigherIsAdversarial).map_err(|e| e.to_string())?;
        let finite = [
            rep.auroc,
            rep.aupr,
            rep.threshold,
            rep.sensitivity,
            rep.specificity,
        ]
        .iter()
        .chain(rep.delta_pnr_mean.iter())
        .chain(rep.delta_pnr_std.iter())
        .all(|v| v.is_finite());
        let drop = before - after;
        ok &= drop >= 0.2 && finite && rep.pairs == y.len();
        parts.push(format!(
            "{}: p(true) {before:.3} -> {after:.3} (drop {drop:.3} >= 0.2), report finite {finite}, mean dPNR {:+.4} (sign reported only), AUROC {:.3}",
            cfg.method,
            rep.delta_pnr_mean.unwrap_or(f64::NAN),
            rep.auroc
        ));
    }
    ok &= losses.len() <= 500;
    let detail = parts.join("; ");
    check(ok, || detail.clone())?;
    Ok(detail)
}

fn faithfulness_oracle() -> Outcome {
    let start = Instant::now();
    let (side, grid) = (56, 14);
    let mut r = rng(0);
    let coef = Tensor::new(
        vec![grid, grid],
        (0..grid * grid)
            .map(|_| r.random_range(-0.1..0.1))
            .collect(),
    )
    .unwrap();
    let img = uniform(&[1, 3, side, side], &mut r);
    let m = LinearPatchModel::new(coef, side, side).unwrap();
    let best =
        faithfulness(&m, &img, 1, &m.contributions(&img).unwrap()).map_err(|e| e.to_string())?;
    let mut pointwise = true;
    let mut max_random = f64::NEG_INFINITY;
    for seed in 0..200 {
        let rnd = random_baseline_faithfulness(&m, &img, 1, (grid, grid), seed).unwrap();
        pointwise &= best
            .mif_curve
            .iter()
            .zip(&rnd.mif_curve)
            .all(|(a, b)| a <= b);
        max_random = max_random.max(rnd.faithfulness);
    }
    let mean = (1000..1050u64)
        .map(|s| {
            random_baseline_faithfulness(&m, &img, 1, (grid, grid), s)
                .unwrap()
                .faithfulness
        })
        .sum::<f64>()
        / 50.0;
    let took = start.elapsed();
    let detail = format!(
        "MIF pointwise <= 200 random orders {pointwise}; exact {:.4} vs best random {max_random:.4}; random mean over 50 seeds {mean:+.4} (|.| <= 0.02); {:.1}s (< 120s)",
        best.faithfulness,
        took.as_secs_f64()
    );
    check(
        pointwise
            && best.faithfulness >= max_random
            && mean.abs() <= 0.02
            && took < Duration::from_secs(120),
        || detail.clone(),
    )?;
    Ok(detail)
}

fn localization() -> Outcome {
    let mut r = rng(901);
    let mut mask = |h: usize, w: usize| {
        BinaryMask::new(h, w, (0..h * w).map(|_| r.random_bool(0.4)).collect()).unwrap()
    };
    let mut exact = true;
    for _ in 0..500 {
        let (p, g) = (mask(8, 8), mask(8, 8));
        let rep = localization_metrics(&p, &g, Channel::Positive).unwrap();
        let want = oracles::metrics(oracles::confusion(p.bits(), g.bits(), 8, 8));
        exact &= [
            rep.pixel_accuracy,
            rep.iou,
            rep.f1,
            rep.precision,
            rep.recall,
        ] == want;
    }
    let pred = BinaryMask::new(1, 4, vec![true, true, false, false]).unwrap();
    let gt = BinaryMask::new(1, 4, vec![true, false, true, false]).unwrap();
    let hand = localization_metrics(&pred, &gt, Channel::Positive).unwrap();
    let hand_ok = hand.iou == 1.0 / 3.0 && hand.f1 == 0.5;
    // +1 on the target block, -1 on the non-target block, 0 elsewhere.
    let block = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
        BinaryMask::new(
            4,
            4,
            (0..16)
                .map(|i| rows.contains(&(i / 4)) && cols.contains(&(i % 4)))
                .collect(),
        )
        .unwrap()
    };
    let (t, n) = (block(0..2, 0..2), block(2..4, 2..4));
    let heat: Vec<f64> = (0..16)
        .map(|i| {
            if t.bits()[i] {
                1.0
            } else if n.bits()[i] {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let heat = Tensor::new(vec![1, 1, 4, 4], heat).unwrap();
    let perfect = evaluate_bidirectional(&heat, &t, Some(&n)).unwrap();
    let perfect_ok = perfect
        .reports()
        .iter()
        .all(|r| [r.pixel_accuracy, r.iou, r.f1, r.precision, r.recall] == [1.0; 5]);
    let pipeline = binarize(&heat.map(|v| v.max(0.0))).unwrap() == t;
    let detail = format!(
        "500 random pairs exact {exact}; hand case IoU {} F1 {}; perfect map all ones {perfect_ok} (binarize recovers target {pipeline})",
        hand.iou, hand.f1
    );
    check(exact && hand_ok && perfect_ok && pipeline, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn bitwise(a: &FaithfulnessReport, b: &FaithfulnessReport) -> bool {
    let same = |x: &[f64], y: &[f64]| {
        x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
    };
    a.mif_order == b.mif_order
        && same(&a.mif_curve, &b.mif_curve)
        && same(&a.lif_curve, &b.lif_curve)
        && a.mif_auc.to_bits() == b.mif_auc.to_bits()
        && a.lif_auc.to_bits() == b.lif_auc.to_bits()
        && a.faithfulness.to_bits() == b.faithfulness.to_bits()
}

fn monotone_invariance() -> Outcome {
    let m = tiny(1001);
    let x = uniform(&[1, 3, 16, 16], &mut rng(1002));
    let s = bicam(&m, &x, 1, &BicamOptions::default())
        .unwrap()
        .patch_scores;
    let base = faithfulness(&m, &x, 1, &s).map_err(|e| e.to_string())?;
    let affine = bitwise(
        &base,
        &faithfulness(&m, &x, 1, &s.map(|v| 2.0 * v + 7.0)).unwrap(),
    );
    let cube = bitwise(
        &base,
        &faithfulness(&m, &x, 1, &s.map(|v| v * v * v)).unwrap(),
    );
    let detail = format!("2x+7 identical {affine}; x^3 identical {cube}");
    check(affine && cube, || detail.clone())?;
    Ok(detail)
}

fn one_pass_cost() -> Outcome {
    let m = tiny(1101);
    let x = uniform(&[1, 3, 16, 16], &mut rng(1102));
    bicam(&m, &x, 0, &BicamOptions::default()).map_err(|e| e.to_string())?;
    m.reset_call_counts();
    let mut times = Vec::new();
    for k in 1..=11 {
        let t = Instant::now();
        bicam(&m, &x, k % 2, &BicamOptions::default()).unwrap();
        times.push(t.elapsed());
        let c = m.call_counts();
        check((c.forward, c.backward) == (k, k), || {
            format!("after {k} calls: {c:?}")
        })?;
    }
    times.sort();
    let median = times[times.len() / 2];
    let detail = format!(
        "11 calls -> 11 forward, 11 backward; median wall-clock {:.2} ms (< 50 ms)",
        median.as_secs_f64() * 1e3
    );
    check(median < Duration::from_millis(50), || detail.clone())?;
    Ok(detail)
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_bicam"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(o.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr))
    })
}

/// `(file name, bytes)` sorted by name.
type Snapshot = Vec<(String, Vec<u8>)>;

fn files(dir: &Path) -> Snapshot {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let model = root.join("model.bin");
    let images = root.join("images");
    let masks = root.join("masks");
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&masks).unwrap();
    run_cli(&[
        "init-model",
        "--out",
        model.to_str().unwrap(),
        "--seed",
        "12",
    ])?;
    let mut r = rng(1201);
    for i in 0..3 {
        std::fs::write(
            images.join(format!("im{i}.ppm")),
            encode_ppm(&uniform(&[1, 3, 16, 16], &mut r)).unwrap(),
        )
        .unwrap();
        let bits = (0..256).map(|_| r.random_bool(0.3)).collect();
        let mask = BinaryMask::new(16, 16, bits).unwrap();
        std::fs::write(
            masks.join(format!("im{i}.pgm")),
            bicam::io::netpbm::encode_pgm(&mask),
        )
        .unwrap();
    }
    let (m, im, mk) = (
        model.to_str().unwrap(),
        images.to_str().unwrap(),
        masks.to_str().unwrap(),
    );
    let mut compared = 0;
    let mut runs: Vec<Vec<Snapshot>> = Vec::new();
    for tag in ["a", "b"] {
        let base = root.join(tag);
        let o = |sub: &str| base.join(sub).to_str().unwrap().to_string();
        run_cli(&["init-model", "--out", &o("init.bin"), "--seed", "12"])?;
        run_cli(&["attribute", im, "--model", m, "--out-dir", &o("attribute")])?;
        run_cli(&["rollout", im, "--model", m, "--out-dir", &o("rollout")])?;
        run_cli(&[
            "attack",
            im,
            "--model",
            m,
            "--seed",
            "5",
            "--out-dir",
            &o("attack"),
        ])?;
        run_cli(&[
            "pnr-detect",
            "--model",
            m,
            "--clean-dir",
            im,
            "--adv-dir",
            &o("attack"),
            "--out-dir",
            &o("detect"),
        ])?;
        run_cli(&[
            "eval-loc",
            im,
            "--mask-dir",
            mk,
            "--model",
            m,
            "--out-dir",
            &o("loc"),
        ])?;
        run_cli(&[
            "eval-faith",
            im,
            "--model",
            m,
            "--random-seeds",
            "4",
            "--out-dir",
            &o("faith"),
        ])?;
        run_cli(&[
            "pnr-detect",
            "--records",
            &o("detect/pnr_records.csv"),
            "--out-dir",
            &o("records"),
        ])?;
        let mut snap = vec![vec![(
            "init.bin".to_string(),
            std::fs::read(base.join("init.bin")).unwrap(),
        )]];
        for sub in [
            "attribute",
            "rollout",
            "attack",
            "detect",
            "loc",
            "faith",
            "records",
        ] {
            snap.push(files(&base.join(sub)));
        }
        runs.push(snap);
    }
    let mut mismatched = Vec::new();
    for (a, b) in runs[0].iter().zip(&runs[1]) {
        for ((na, da), (nb, db)) in a.iter().zip(b) {
            compared += usize::from(na.ends_with(".csv"));
            if na != nb || da != db {
                mismatched.push(na.clone());
            }
        }
    }
    let saved = std::fs::read(&model).unwrap();
    let loaded = VisionTransformer::from_bytes(&saved).map_err(|e| e.to_string())?;
    let roundtrip = loaded.to_bytes().unwrap() == saved
        && std::fs::read(root.join("a/init.bin")).unwrap() == saved;
    let detail = format!(
        "7 commands x 2 runs: {compared} CSV files compared, mismatches {mismatched:?}; weight file round trip bitwise {roundtrip}"
    );
    check(mismatched.is_empty() && compared > 0 && roundtrip, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 12] = [
        (1, gradient_fidelity),
        (2, decomposition),
        (3, sign_preservation),
        (4, temperature),
        (5, pnr_oracle),
        (6, detection_statistics),
        (7, directional_delta_pnr),
        (8, faithfulness_oracle),
        (9, localization),
        (10, monotone_invariance),
        (11, one_pass_cost),
        (12, reproducibility),
    ];
    let mut failed = 0;
    for (n, f) in criteria {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {n}: PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL - {detail}");
            }
        }
    }
    println!("{} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
