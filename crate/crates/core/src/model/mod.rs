//! MLP encoder with manual forward/backward passes, Adam, and freezing.

mod adam;
pub mod checkpoint;
mod encoder;
mod layer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use encoder::{init_encoder, Activations, EncoderParams, EncoderSpec, Gradients, Head, Mode};
pub use layer::{Activation, BatchNorm, Layer, LayerGrads, LayerSpec, BN_EPS, BN_MOMENTUM};
