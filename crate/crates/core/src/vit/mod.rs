//! A small, instrumented Vision Transformer.

mod config;
mod model;
pub mod train;
pub mod weights;

pub use config::{default_layer_window, ViTConfig, DEFAULT_TEMPERATURE, LAYERNORM_EPS};
pub use model::{CallCounts, ForwardOptions, ForwardPass, LayerCapture, VisionTransformer};
pub use weights::ViTWeights;
