use crate::error::{Error, Result};

/// Shape and attribution hyperparameters of a [`VisionTransformer`](super::VisionTransformer).
#[derive(Clone, Debug, PartialEq)]
pub struct ViTConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub num_classes: usize,
    /// DeiT-style second special token after [CLS].
    pub distillation_token: bool,
    /// Number of trailing blocks captured for attribution.
    pub layer_window: usize,
    /// Softmax temperature used by the attribution step only.
    pub temperature: f64,
}

pub const DEFAULT_TEMPERATURE: f64 = 2.0;
pub const LAYERNORM_EPS: f64 = 1e-6;

/// `round(2L/3)`, never below one layer.
pub fn default_layer_window(num_layers: usize) -> usize {
    ((2 * num_layers + 1) / 3).max(1)
}

impl ViTConfig {
    /// The desk-scale model used throughout the tests: 16x16 RGB input,
    /// 4x4 patches, four blocks of width 16 with two heads.
    pub fn tiny() -> Self {
        Self::new(16, 4, 4, 2, 16, 32, 2)
    }

    /// Square-image config with the default window and temperature.
    pub fn new(
        image_size: usize,
        patch_size: usize,
        num_layers: usize,
        num_heads: usize,
        embed_dim: usize,
        ffn_dim: usize,
        num_classes: usize,
    ) -> Self {
        ViTConfig {
            image_height: image_size,
            image_width: image_size,
            patch_size,
            num_layers,
            num_heads,
            embed_dim,
            ffn_dim,
            num_classes,
            distillation_token: false,
            layer_window: default_layer_window(num_layers),
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("patch_size", self.patch_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("embed_dim", self.embed_dim),
            ("ffn_dim", self.ffn_dim),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::param(format!("{name} must be positive")));
        }
        if !self.image_height.is_multiple_of(self.patch_size)
            || !self.image_width.is_multiple_of(self.patch_size)
        {
            return Err(Error::param(format!(
                "image {}x{} is not divisible by patch size {}",
                self.image_height, self.image_width, self.patch_size
            )));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::param(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.layer_window == 0 || self.layer_window > self.num_layers {
            return Err(Error::param(format!(
                "layer_window {} outside 1..={}",
                self.layer_window, self.num_layers
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::param(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Patch grid as `(rows, cols)`.
    pub fn grid(&self) -> (usize, usize) {
        (
            self.image_height / self.patch_size,
            self.image_width / self.patch_size,
        )
    }

    pub fn num_patches(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    /// [CLS], plus the distillation token when enabled.
    pub fn num_special_tokens(&self) -> usize {
        1 + usize::from(self.distillation_token)
    }

    pub fn num_tokens(&self) -> usize {
        self.num_patches() + self.num_special_tokens()
    }

    /// Flattened length of one RGB patch.
    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    /// 1-based indices of the captured blocks.
    pub fn captured_layers(&self, window: usize) -> std::ops::RangeInclusive<usize> {
        self.num_layers - window + 1..=self.num_layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_window_is_two_thirds_rounded() {
        assert_eq!(default_layer_window(12), 8);
        assert_eq!(default_layer_window(4), 3);
        assert_eq!(default_layer_window(6), 4);
        assert_eq!(default_layer_window(5), 3);
        assert_eq!(default_layer_window(1), 1);
        for l in 1..50 {
            let expected = (2.0 * l as f64 / 3.0).round() as usize;
            assert_eq!(default_layer_window(l), expected.max(1), "L={l}");
        }
    }

    #[test]
    fn token_counts_across_test_matrix() {
        for &layers in &[4, 6, 12] {
            for &heads in &[2, 4] {
                for &(image, patch) in &[(16, 4), (56, 4)] {
                    let mut cfg = ViTConfig::new(image, patch, layers, heads, 16, 32, 3);
                    cfg.validate().unwrap();
                    let g = image / patch;
                    assert_eq!(cfg.num_tokens(), g * g + 1);
                    let patches = cfg.num_tokens() - 1;
                    let root = (patches as f64).sqrt() as usize;
                    assert_eq!(root * root, patches);
                    assert_eq!(
                        cfg.captured_layers(cfg.layer_window).count(),
                        cfg.layer_window
                    );

                    cfg.distillation_token = true;
                    assert_eq!(cfg.num_tokens(), g * g + 2);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ViTConfig::tiny();
        c.patch_size = 5;
        assert!(c.validate().is_err());
        let mut c = ViTConfig::tiny();
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ViTConfig::tiny();
        c.layer_window = 5;
        assert!(c.validate().is_err());
        let mut c = ViTConfig::tiny();
        c.temperature = 0.0;
        assert!(c.validate().is_err());
    }
}
