//! Named weight tensors and the `BICAMW1` container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        7 bytes   "BICAMW1"
//! config       10 x u64  image_height, image_width, patch_size, num_layers,
//!                        num_heads, embed_dim, ffn_dim, num_classes,
//!                        distillation_token (0 | 1), layer_window
//!              1 x f64   temperature
//! count        u64       number of tensor records
//! record       u32 name length, UTF-8 name, u32 rank, rank x u64 dims,
//!              product(dims) x f64 row-major payload
//! ```
//!
//! Every tensor the config implies must appear exactly once with the
//! implied shape; unknown names and trailing bytes are rejected.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::ViTConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"BICAMW1";

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct ViTWeights {
    tensors: BTreeMap<String, Tensor>,
}

#[derive(Clone, Copy, PartialEq)]
enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

fn layout(config: &ViTConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.embed_dim;
    let f = config.ffn_dim;
    let mut out = vec![
        (
            "patch_embed.weight".into(),
            vec![config.patch_dim(), d],
            Init::TruncNormal,
        ),
        ("patch_embed.bias".into(), vec![d], Init::Zeros),
        ("cls_token".into(), vec![d], Init::TruncNormal),
        (
            "pos_embed".into(),
            vec![config.num_tokens(), d],
            Init::TruncNormal,
        ),
        ("norm.gain".into(), vec![d], Init::Ones),
        ("norm.bias".into(), vec![d], Init::Zeros),
        (
            "head.weight".into(),
            vec![d, config.num_classes],
            Init::TruncNormal,
        ),
        ("head.bias".into(), vec![config.num_classes], Init::Zeros),
    ];
    if config.distillation_token {
        out.push(("dist_token".into(), vec![d], Init::TruncNormal));
    }
    for l in 0..config.num_layers {
        let p = |s: &str| format!("blocks.{l}.{s}");
        out.extend([
            (p("norm1.gain"), vec![d], Init::Ones),
            (p("norm1.bias"), vec![d], Init::Zeros),
            (p("attn.q.weight"), vec![d, d], Init::TruncNormal),
            (p("attn.q.bias"), vec![d], Init::Zeros),
            (p("attn.k.weight"), vec![d, d], Init::TruncNormal),
            (p("attn.k.bias"), vec![d], Init::Zeros),
            (p("attn.v.weight"), vec![d, d], Init::TruncNormal),
            (p("attn.v.bias"), vec![d], Init::Zeros),
            (p("attn.proj.weight"), vec![d, d], Init::TruncNormal),
            (p("attn.proj.bias"), vec![d], Init::Zeros),
            (p("norm2.gain"), vec![d], Init::Ones),
            (p("norm2.bias"), vec![d], Init::Zeros),
            (p("mlp.fc1.weight"), vec![d, f], Init::TruncNormal),
            (p("mlp.fc1.bias"), vec![f], Init::Zeros),
            (p("mlp.fc2.weight"), vec![f, d], Init::TruncNormal),
            (p("mlp.fc2.bias"), vec![d], Init::Zeros),
        ]);
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Every tensor name the config implies, with its shape, in name order.
pub fn expected_shapes(config: &ViTConfig) -> Vec<(String, Vec<usize>)> {
    layout(config).into_iter().map(|(n, s, _)| (n, s)).collect()
}

impl ViTWeights {
    /// Truncated-normal (std 0.02, cut at two sigma) matrices and embeddings,
    /// unit layernorm gains, zero biases. Same seed, same bits.
    pub fn init(config: &ViTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let tensors = layout(config)
            .into_iter()
            .map(|(name, shape, init)| {
                let t = match init {
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::Ones => Tensor::ones(&shape),
                    Init::TruncNormal => {
                        let n = shape.iter().product();
                        let data = (0..n)
                            .map(|_| loop {
                                let z: f64 = normal.sample(&mut rng);
                                if z.abs() <= 2.0 {
                                    break z * INIT_STD;
                                }
                            })
                            .collect();
                        Tensor::new(shape, data).expect("layout shape")
                    }
                };
                (name, t)
            })
            .collect();
        Ok(ViTWeights { tensors })
    }

    /// All-zero weights, including layernorm gains.
    pub fn zeros(config: &ViTConfig) -> Result<Self> {
        config.validate()?;
        let tensors = layout(config)
            .into_iter()
            .map(|(name, shape, _)| (name, Tensor::zeros(&shape)))
            .collect();
        Ok(ViTWeights { tensors })
    }

    pub fn from_map(config: &ViTConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let w = ViTWeights { tensors };
        w.validate(config)?;
        Ok(w)
    }

    pub fn validate(&self, config: &ViTConfig) -> Result<()> {
        config.validate()?;
        let expected = expected_shapes(config);
        for (name, shape) in &expected {
            match self.tensors.get(name) {
                None => return Err(Error::format(format!("missing tensor {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::format(format!(
                        "tensor {name} has shape {:?}, config implies {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if self.tensors.len() != expected.len() {
            let unknown = self
                .tensors
                .keys()
                .find(|k| !expected.iter().any(|(n, _)| n == *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::format(format!("unexpected tensor {unknown}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("weights validated without {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// SHA-256 over names, shapes and little-endian payloads, as lowercase hex.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Total scalar count implied by `config`, or `None` on overflow.
pub fn parameter_count(config: &ViTConfig) -> Option<usize> {
    let d = config.embed_dim;
    let f = config.ffn_dim;
    let rows = config.image_height / config.patch_size.max(1);
    let cols = config.image_width / config.patch_size.max(1);
    let tokens = rows
        .checked_mul(cols)?
        .checked_add(config.num_special_tokens())?;
    let per_block = d
        .checked_mul(d)?
        .checked_mul(4)?
        .checked_add(d.checked_mul(f)?.checked_mul(2)?)?
        .checked_add(d.checked_mul(9)?)?
        .checked_add(f)?;
    let patch = config
        .patch_size
        .checked_mul(config.patch_size)?
        .checked_mul(3)?
        .checked_mul(d)?;
    let head = d
        .checked_mul(config.num_classes)?
        .checked_add(config.num_classes)?;
    let special = d.checked_mul(config.num_special_tokens())?;
    per_block
        .checked_mul(config.num_layers)?
        .checked_add(patch)?
        .checked_add(d.checked_mul(3)?)?
        .checked_add(tokens.checked_mul(d)?)?
        .checked_add(head)?
        .checked_add(special)
}

/// Serializes config and weights into a `BICAMW1` byte buffer.
pub fn encode(config: &ViTConfig, weights: &ViTWeights) -> Result<Vec<u8>> {
    weights.validate(config)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        config.image_height,
        config.image_width,
        config.patch_size,
        config.num_layers,
        config.num_heads,
        config.embed_dim,
        config.ffn_dim,
        config.num_classes,
        usize::from(config.distillation_token),
        config.layer_window,
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&config.temperature.to_le_bytes());
    out.extend_from_slice(&(weights.tensors.len() as u64).to_le_bytes());
    for (name, t) in &weights.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(format!(
                "truncated weight file while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?)
            .map_err(|_| Error::format(format!("{what} does not fit in memory")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Parses and validates a `BICAMW1` buffer.
pub fn decode(bytes: &[u8]) -> Result<(ViTConfig, ViTWeights)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::format("bad magic: not a BICAMW1 weight file"));
    }
    let mut ints = [0usize; 10];
    for (i, slot) in ints.iter_mut().enumerate() {
        *slot = r.usize(&format!("config field {i}"))?;
    }
    let distillation_token = match ints[8] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::format(format!(
                "distillation_token flag must be 0 or 1, got {other}"
            )))
        }
    };
    let config = ViTConfig {
        image_height: ints[0],
        image_width: ints[1],
        patch_size: ints[2],
        num_layers: ints[3],
        num_heads: ints[4],
        embed_dim: ints[5],
        ffn_dim: ints[6],
        num_classes: ints[7],
        distillation_token,
        layer_window: ints[9],
        temperature: r.f64("temperature")?,
    };
    config
        .validate()
        .map_err(|e| Error::format(format!("invalid config block: {e}")))?;

    parameter_count(&config)
        .filter(|&n| n <= r.remaining() / 8)
        .ok_or_else(|| Error::format("config implies more parameters than the file holds"))?;

    let count = r.usize("tensor count")?;
    // Each record needs at least its two length fields.
    if count > r.remaining() / 8 {
        return Err(Error::format(format!(
            "tensor count {count} exceeds file size"
        )));
    }
    let expected: BTreeMap<String, Vec<usize>> = expected_shapes(&config).into_iter().collect();
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::format("tensor name is not UTF-8"))?
            .to_string();
        let shape = expected
            .get(&name)
            .ok_or_else(|| Error::format(format!("unexpected tensor {name:?}")))?;
        let rank = r.u32("rank")? as usize;
        if rank != shape.len() {
            return Err(Error::format(format!(
                "tensor {name} has rank {rank}, config implies {}",
                shape.len()
            )));
        }
        for (axis, &want) in shape.iter().enumerate() {
            let got = r.u64("dimension")?;
            if got != want as u64 {
                return Err(Error::format(format!(
                    "tensor {name} axis {axis} is {got}, config implies {want}"
                )));
            }
        }
        let numel: usize = shape.iter().product();
        let payload = r.take(numel.saturating_mul(8), "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors
            .insert(name.clone(), Tensor::new(shape.clone(), data)?)
            .is_some()
        {
            return Err(Error::format(format!("duplicate tensor {name}")));
        }
    }
    if r.remaining() != 0 {
        return Err(Error::format(format!("{} trailing bytes", r.remaining())));
    }
    let weights = ViTWeights { tensors };
    weights.validate(&config)?;
    Ok((config, weights))
}
