//! Kernel prediction network with hand-written forward and backward passes.

mod checkpoint;
mod layers;
mod net;

pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_VERSION};
pub use layers::{conv3x3, conv3x3_backward, prelu, prelu_backward, upsample_bilinear, upsample_bilinear_backward};
pub use net::{ActivationTape, KPNet, KPNetConfig, ParamSpec, HEAD_NAMES, HEAD_WEIGHT_INIT_SCALE, PRELU_INIT};

#[cfg(test)]
mod tests;
