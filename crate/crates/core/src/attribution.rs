//! Signed attribution maps from captured attention, values and [CLS]
//! gradients, plus the attention-rollout baseline.
//!
//! Per captured layer and head the map weights each token's value vector by
//! the class gradient (a dot product over the head's slice of the [CLS]
//! gradient) and modulates it with temperature-softened [CLS] attention.
//! Heads are summed, then layers. Nothing is rectified: negative entries are
//! suppressive evidence and survive to the heatmap.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};
use crate::vit::{ForwardOptions, LayerCapture, VisionTransformer};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Upsample {
    /// Half-pixel-centred bilinear interpolation with edge clamping.
    #[default]
    Bilinear,
    Nearest,
}

impl std::str::FromStr for Upsample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Upsample::Bilinear),
            "nearest" => Ok(Upsample::Nearest),
            other => Err(Error::param(format!("unknown upsampling mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Upsample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Upsample::Bilinear => "bilinear",
            Upsample::Nearest => "nearest",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    /// Signed per-patch scores, `[B, rows, cols]`.
    pub patch_scores: Tensor,
    /// Upsampled scores at image resolution, `[B, 1, H, W]`.
    pub heatmap: Tensor,
    /// Queried class; `None` for class-agnostic maps.
    pub class: Option<usize>,
    pub window: usize,
    pub temperature: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BicamOptions {
    /// Defaults to the model config's window.
    pub window: Option<usize>,
    /// Defaults to the model config's temperature.
    pub temperature: Option<f64>,
    pub upsample: Upsample,
}

/// Temperature softmax of each head's [CLS] attention row, `[B, H, N]`.
pub fn attribution_alpha(capture: &LayerCapture, temperature: f64) -> Result<Tensor> {
    let &[b, h, n, n2] = capture.attn_logits.shape() else {
        return Err(Error::shape(format!(
            "attention logits of shape {:?}",
            capture.attn_logits.shape()
        )));
    };
    if n != n2 {
        return Err(Error::shape("attention logits are not square"));
    }
    let mut rows = Vec::with_capacity(b * h * n);
    for bh in 0..b * h {
        let base = bh * n * n;
        rows.extend_from_slice(&capture.attn_logits.data()[base..base + n]);
    }
    tensor::softmax(&Tensor::new(vec![b, h, n], rows)?, temperature)
}

/// Signed per-token mask for one layer, `[B, N]`:
/// `sum_h (V_h . w_h) * alpha_h`, with `w_h` the head-`h` slice of the
/// [CLS] gradient.
pub fn layer_mask(capture: &LayerCapture, alpha: &Tensor) -> Result<Tensor> {
    let grad = capture.cls_out_grad.as_ref().ok_or_else(|| {
        Error::State(format!(
            "layer {} has no [CLS] gradient; run backward first",
            capture.layer
        ))
    })?;
    let &[b, h, n, dh] = capture.values.shape() else {
        return Err(Error::shape(format!(
            "values of shape {:?}",
            capture.values.shape()
        )));
    };
    if alpha.shape() != [b, h, n] || grad.shape() != [b, h * dh] {
        return Err(Error::shape(format!(
            "alpha {:?} and gradient {:?} for values {:?}",
            alpha.shape(),
            grad.shape(),
            capture.values.shape()
        )));
    }
    let values = capture.values.data();
    let mut mask = vec![0.0; b * n];
    for bi in 0..b {
        let g = &grad.data()[bi * h * dh..(bi + 1) * h * dh];
        for head in 0..h {
            let w = &g[head * dh..(head + 1) * dh];
            let a = &alpha.data()[(bi * h + head) * n..(bi * h + head + 1) * n];
            for (tok, out) in mask[bi * n..(bi + 1) * n].iter_mut().enumerate() {
                let base = ((bi * h + head) * n + tok) * dh;
                let proj: f64 = values[base..base + dh]
                    .iter()
                    .zip(w)
                    .map(|(v, w)| v * w)
                    .sum();
                *out += proj * a[tok];
            }
        }
    }
    Tensor::new(vec![b, n], mask)
}

/// Sums per-layer masks over all captures, `[B, N]`.
pub fn aggregate_masks(captures: &[LayerCapture], temperature: f64) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for cap in captures {
        let m = layer_mask(cap, &attribution_alpha(cap, temperature)?)?;
        total = Some(match total {
            None => m,
            Some(t) => t.zip_map(&m, |a, b| a + b)?,
        });
    }
    total.ok_or_else(|| Error::State("no captured layers to aggregate".into()))
}

/// Drops the special tokens from `[B, N]` token scores and reshapes to the
/// patch grid, `[B, rows, cols]`.
pub fn tokens_to_grid(
    token_scores: &Tensor,
    special_tokens: usize,
    grid: (usize, usize),
) -> Result<Tensor> {
    let &[b, n] = token_scores.shape() else {
        return Err(Error::shape(format!(
            "token scores of shape {:?}",
            token_scores.shape()
        )));
    };
    let patches = grid.0 * grid.1;
    if n != patches + special_tokens {
        return Err(Error::shape(format!(
            "{n} tokens do not match {special_tokens} special + {}x{} patches",
            grid.0, grid.1
        )));
    }
    let mut data = Vec::with_capacity(b * patches);
    for row in token_scores.data().chunks(n) {
        data.extend_from_slice(&row[special_tokens..]);
    }
    Tensor::new(vec![b, grid.0, grid.1], data)
}

/// Upsamples one `[rows, cols]` grid to `[height, width]`.
pub fn upsample_grid(grid: &Tensor, height: usize, width: usize, mode: Upsample) -> Result<Tensor> {
    let &[rows, cols] = grid.shape() else {
        return Err(Error::shape(format!("grid of shape {:?}", grid.shape())));
    };
    if rows == 0 || cols == 0 {
        return Err(Error::shape("empty grid"));
    }
    let src = grid.data();
    let mut out = Vec::with_capacity(height * width);
    match mode {
        Upsample::Nearest => {
            for y in 0..height {
                let sy = y * rows / height;
                for x in 0..width {
                    out.push(src[sy * cols + x * cols / width]);
                }
            }
        }
        Upsample::Bilinear => {
            let coord = |dst: usize, src_len: usize, dst_len: usize| {
                let scale = src_len as f64 / dst_len as f64;
                let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (s.floor() as usize).min(src_len - 1);
                let i1 = (i0 + 1).min(src_len - 1);
                (i0, i1, s - i0 as f64)
            };
            for y in 0..height {
                let (y0, y1, fy) = coord(y, rows, height);
                for x in 0..width {
                    let (x0, x1, fx) = coord(x, cols, width);
                    let top = src[y0 * cols + x0] * (1.0 - fx) + src[y0 * cols + x1] * fx;
                    let bottom = src[y1 * cols + x0] * (1.0 - fx) + src[y1 * cols + x1] * fx;
                    out.push(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    Tensor::new(vec![height, width], out)
}

fn heatmap_from_grid(grid: &Tensor, height: usize, width: usize, mode: Upsample) -> Result<Tensor> {
    let b = grid.shape()[0];
    let planes = (0..b)
        .map(|i| upsample_grid(&grid.index_axis0(i), height, width, mode))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(b * height * width);
    for p in planes {
        data.extend(p.into_data());
    }
    Tensor::new(vec![b, 1, height, width], data)
}

/// Builds an [`AttributionMap`] from already-backpropagated captures.
pub fn map_from_captures(
    model: &VisionTransformer,
    captures: &[LayerCapture],
    class: usize,
    temperature: f64,
    upsample: Upsample,
) -> Result<AttributionMap> {
    let cfg = model.config();
    let tokens = aggregate_masks(captures, temperature)?;
    let patch_scores = tokens_to_grid(&tokens, cfg.num_special_tokens(), cfg.grid())?;
    let heatmap = heatmap_from_grid(&patch_scores, cfg.image_height, cfg.image_width, upsample)?;
    Ok(AttributionMap {
        patch_scores,
        heatmap,
        class: Some(class),
        window: captures.len(),
        temperature,
    })
}

/// Signed attribution for `class` from one forward and one backward pass.
pub fn bicam(
    model: &VisionTransformer,
    image: &Tensor,
    class: usize,
    opts: &BicamOptions,
) -> Result<AttributionMap> {
    let cfg = model.config();
    let temperature = opts.temperature.unwrap_or(cfg.temperature);
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::param(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut pass = model.forward_with(
        image,
        &ForwardOptions {
            capture: true,
            window: opts.window,
            cls_offset: None,
        },
    )?;
    model.backward_class(&mut pass, class)?;
    map_from_captures(model, pass.captures(), class, temperature, opts.upsample)
}

/// Rollout of per-layer attention `[H, N, N]` (softmax probabilities):
/// head-average, add identity, row-normalise, multiply from the first layer
/// up. Returns the `[N, N]` product.
pub fn rollout_matrix(attentions: &[Tensor]) -> Result<Tensor> {
    let first = attentions
        .first()
        .ok_or_else(|| Error::shape("rollout needs at least one layer"))?;
    let &[_, n, _] = first.shape() else {
        return Err(Error::shape(format!(
            "attention of shape {:?}",
            first.shape()
        )));
    };
    let mut acc: Vec<f64> = (0..n * n)
        .map(|i| f64::from(u8::from(i % (n + 1) == 0)))
        .collect();
    for att in attentions {
        let &[h, rows, cols] = att.shape() else {
            return Err(Error::shape(format!(
                "attention of shape {:?}",
                att.shape()
            )));
        };
        if rows != n || cols != n || h == 0 {
            return Err(Error::shape(format!(
                "attention of shape {:?}",
                att.shape()
            )));
        }
        let mut a = vec![0.0; n * n];
        for head in att.data().chunks(n * n) {
            a.iter_mut().zip(head).for_each(|(x, y)| *x += y / h as f64);
        }
        for i in 0..n {
            a[i * n + i] += 1.0;
        }
        for row in a.chunks_mut(n) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        // acc <- a . acc, so later layers multiply on the left
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let aik = a[i * n + k];
                for j in 0..n {
                    next[i * n + j] += aik * acc[k * n + j];
                }
            }
        }
        acc = next;
    }
    Tensor::new(vec![n, n], acc)
}

/// Class-agnostic attention rollout over every block; unsigned.
pub fn attention_rollout(
    model: &VisionTransformer,
    image: &Tensor,
    upsample: Upsample,
) -> Result<AttributionMap> {
    let cfg = model.config();
    let pass = model.forward_with(
        image,
        &ForwardOptions {
            capture: true,
            window: Some(cfg.num_layers),
            cls_offset: None,
        },
    )?;
    let n = cfg.num_tokens();
    let batch = image.shape()[0];
    let probs: Vec<Tensor> = pass
        .captures()
        .iter()
        .map(|c| tensor::softmax(&c.attn_logits, 1.0))
        .collect::<Result<_>>()?;
    let mut cls_rows = Vec::with_capacity(batch * n);
    for b in 0..batch {
        let per_layer: Vec<Tensor> = probs.iter().map(|p| p.index_axis0(b)).collect();
        let r = rollout_matrix(&per_layer)?;
        cls_rows.extend_from_slice(&r.data()[..n]);
    }
    let tokens = Tensor::new(vec![batch, n], cls_rows)?;
    let patch_scores = tokens_to_grid(&tokens, cfg.num_special_tokens(), cfg.grid())?;
    let heatmap = heatmap_from_grid(&patch_scores, cfg.image_height, cfg.image_width, upsample)?;
    Ok(AttributionMap {
        patch_scores,
        heatmap,
        class: None,
        window: cfg.num_layers,
        temperature: 1.0,
    })
}

/// `(max(M, 0), max(-M, 0))`, elementwise.
pub fn split_channels(map: &Tensor) -> (Tensor, Tensor) {
    (map.map(|v| v.max(0.0)), map.map(|v| (-v).max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn capture(
        logits: Vec<f64>,
        values: Vec<f64>,
        grad: Option<Vec<f64>>,
        h: usize,
        n: usize,
        dh: usize,
    ) -> LayerCapture {
        LayerCapture {
            layer: 1,
            attn_logits: Tensor::new(vec![1, h, n, n], logits).unwrap(),
            values: Tensor::new(vec![1, h, n, dh], values).unwrap(),
            cls_out: Tensor::zeros(&[1, h * dh]),
            cls_out_grad: grad.map(|g| Tensor::new(vec![1, h * dh], g).unwrap()),
        }
    }

    #[test]
    fn alpha_worked_values() {
        let c = capture(vec![0.7; 9], vec![0.0; 6], None, 1, 3, 2);
        let a = attribution_alpha(&c, 2.0).unwrap();
        assert!(a.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));

        let c = capture(
            vec![0.0, 2.0 * 3f64.ln(), 5.0, 5.0],
            vec![0.0; 2],
            None,
            1,
            2,
            1,
        );
        let a = attribution_alpha(&c, 2.0).unwrap();
        assert!((a.data()[0] - 0.25).abs() < 1e-15);
        assert!((a.data()[1] - 0.75).abs() < 1e-15);

        let logits: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
        let c = capture(logits, vec![0.0; 4], None, 1, 4, 1);
        let a = attribution_alpha(&c, 1e4).unwrap();
        assert!(a.data().iter().all(|v| (v - 0.25).abs() < 1e-3));

        assert!(attribution_alpha(&c, 0.0).is_err());
    }

    #[test]
    fn mask_needs_gradient() {
        let c = capture(vec![0.0; 4], vec![1.0; 2], None, 1, 2, 1);
        let a = attribution_alpha(&c, 1.0).unwrap();
        assert!(matches!(layer_mask(&c, &a), Err(Error::State(_))));
    }

    #[test]
    fn zero_gradient_gives_zero_mask() {
        let c = capture(vec![0.3; 8], vec![0.9; 8], Some(vec![0.0; 4]), 2, 2, 2);
        let a = attribution_alpha(&c, 2.0).unwrap();
        assert!(layer_mask(&c, &a).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_gradient_selects_first_value_column() {
        // one head, three tokens, d_h = 2, w = e_1
        let values = vec![1.0, 5.0, -2.0, 7.0, 0.5, -1.0];
        let c = capture(
            vec![0.1, 0.4, -0.3, 0., 0., 0., 0., 0., 0.],
            values.clone(),
            Some(vec![1.0, 0.0]),
            1,
            3,
            2,
        );
        let a = attribution_alpha(&c, 1.0).unwrap();
        let m = layer_mask(&c, &a).unwrap();
        for i in 0..3 {
            assert_eq!(m.data()[i], values[2 * i] * a.data()[i]);
        }
    }

    #[test]
    fn split_reconstructs() {
        let m = Tensor::from_vec(vec![1.0, -2.0, 0.0]);
        let (p, n) = split_channels(&m);
        assert_eq!(p.data(), &[1.0, 0.0, 0.0]);
        assert_eq!(n.data(), &[0.0, 2.0, 0.0]);
        let all_pos = Tensor::from_vec(vec![0.5, 3.0]);
        assert!(split_channels(&all_pos).1.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nearest_upsampling_replicates_blocks() {
        let g = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = upsample_grid(&g, 4, 4, Upsample::Nearest).unwrap();
        assert_eq!(
            up.data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
    }

    #[test]
    fn bilinear_upsampling_matches_hand_values() {
        let g = Tensor::new(vec![1, 2], vec![0.0, 4.0]).unwrap();
        let up = upsample_grid(&g, 1, 4, Upsample::Bilinear).unwrap();
        // sources at -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to the edge)
        assert_eq!(up.data(), &[0.0, 1.0, 3.0, 4.0]);
        let c = Tensor::full(&[3, 3], -2.5);
        let up = upsample_grid(&c, 12, 12, Upsample::Bilinear).unwrap();
        assert!(up.data().iter().all(|&v| v == -2.5));
    }

    #[test]
    fn rollout_uniform_and_identity() {
        let n = 5;
        let uniform = Tensor::full(&[2, n, n], 1.0 / n as f64);
        let r = rollout_matrix(&[uniform]).unwrap();
        let cls = &r.data()[1..n];
        assert!(cls.iter().all(|v| (v - cls[0]).abs() < 1e-15));

        let mut eye = Tensor::zeros(&[1, n, n]);
        for i in 0..n {
            eye.set(&[0, i, i], 1.0);
        }
        let r = rollout_matrix(&[eye.clone(), eye.clone(), eye]).unwrap();
        assert_eq!(r.data()[0], 1.0);
        assert!(r.data()[1..n].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rollout_two_layers_by_hand() {
        // 3 tokens, one head per layer
        let a1 = Tensor::new(
            vec![1, 3, 3],
            vec![0.5, 0.25, 0.25, 0.0, 1.0, 0.0, 0.2, 0.3, 0.5],
        )
        .unwrap();
        let a2 = Tensor::new(
            vec![1, 3, 3],
            vec![0.0, 0.5, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        // (A + I) / 2 per layer, then A2' . A1'
        let r1 = [0.75, 0.125, 0.125, 0.0, 1.0, 0.0, 0.1, 0.15, 0.75];
        let r2 = [0.5, 0.25, 0.25, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0];
        let mut expected = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                expected[i * 3 + j] = (0..3).map(|k| r2[i * 3 + k] * r1[k * 3 + j]).sum();
            }
        }
        let r = rollout_matrix(&[a1, a2]).unwrap();
        for (a, b) in r.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        // first row by hand: [0.4, 0.35, 0.25]
        assert!((r.data()[0] - 0.4).abs() < 1e-15);
        assert!((r.data()[1] - 0.35).abs() < 1e-15);
        assert!((r.data()[2] - 0.25).abs() < 1e-15);
        for row in r.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }
}
