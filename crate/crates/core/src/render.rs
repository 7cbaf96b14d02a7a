//! Diverging red/blue rendering of signed maps.
//!
//! Scores are divided by the largest magnitude `s`, so `t = v / s` lies in
//! `[-1, 1]` and zero always lands on white:
//!
//! - `t >= 0`: `(255, 255(1 - t), 255(1 - t))`, white to red
//! - `t < 0`:  `(255(1 + t), 255(1 + t), 255)`, white to blue
//!
//! Components are rounded to the nearest byte. An all-zero map renders
//! white. The positive and negative channel images use the same `s` and are
//! white where their channel is empty, so the signed rendering is their
//! per-component minimum.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn grid_dims(map: &Tensor) -> Result<(usize, usize)> {
    let s = map.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::shape(format!(
            "rendering needs a 2-D map, got {s:?}"
        )));
    }
    if !map.is_finite() {
        return Err(Error::Numeric {
            context: "render".into(),
        });
    }
    Ok((s[s.len() - 2], s[s.len() - 1]))
}

fn byte(x: f64) -> u8 {
    (255.0 * x).round().clamp(0.0, 255.0) as u8
}

/// RGB for one normalized value `t` in `[-1, 1]`.
pub fn diverging_color(t: f64) -> [u8; 3] {
    if t >= 0.0 {
        let c = byte(1.0 - t);
        [255, c, c]
    } else {
        let c = byte(1.0 + t);
        [c, c, 255]
    }
}

/// A rendered image: interleaved RGB bytes, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb {
    pub height: usize,
    pub width: usize,
    pub bytes: Vec<u8>,
}

impl Rgb {
    pub fn to_ppm(&self) -> Vec<u8> {
        crate::io::netpbm::encode_rgb(self.width, self.height, &self.bytes)
    }
}

fn render_with(map: &Tensor, keep: impl Fn(f64) -> f64) -> Result<Rgb> {
    let (height, width) = grid_dims(map)?;
    let scale = map.max_abs();
    let bytes = map
        .data()
        .iter()
        .flat_map(|&v| {
            let t = if scale > 0.0 { keep(v) / scale } else { 0.0 };
            diverging_color(t)
        })
        .collect();
    Ok(Rgb {
        height,
        width,
        bytes,
    })
}

/// Symmetric diverging rendering of a signed map.
pub fn render_signed(map: &Tensor) -> Result<Rgb> {
    render_with(map, |v| v)
}

/// Supportive evidence only, scaled like [`render_signed`].
pub fn render_positive(map: &Tensor) -> Result<Rgb> {
    render_with(map, |v| v.max(0.0))
}

/// Suppressive evidence only, scaled like [`render_signed`].
pub fn render_negative(map: &Tensor) -> Result<Rgb> {
    render_with(map, |v| v.min(0.0))
}

/// Per-component minimum of the two channel renderings.
pub fn combine_channels(positive: &Rgb, negative: &Rgb) -> Result<Rgb> {
    if (positive.height, positive.width) != (negative.height, negative.width) {
        return Err(Error::shape("channel renderings differ in size"));
    }
    Ok(Rgb {
        bytes: positive
            .bytes
            .iter()
            .zip(&negative.bytes)
            .map(|(a, b)| *a.min(b))
            .collect(),
        ..positive.clone()
    })
}
