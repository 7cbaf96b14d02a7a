pub mod adversarial;
pub mod attribution;
pub mod classifier;
pub mod error;
pub mod eval;
pub mod io;
pub mod pnr;
pub mod render;
pub mod seed;
pub mod tensor;
pub mod vit;

pub use classifier::ImageClassifier;
pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
pub use vit::{LayerCapture, ViTConfig, ViTWeights, VisionTransformer};
