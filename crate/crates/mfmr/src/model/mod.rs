//! The encoder: configuration and parameters, forward pass with attention
//! masking, the pre-training and classification losses, and hand-written
//! reverse-mode gradients. All math is 64-bit.

pub mod backward;
pub mod forward;
pub mod loss;
pub mod math;
pub mod params;

use thiserror::Error;

pub use backward::{backward, backward_classify};
pub use forward::{forward, ForwardTrace, Mode};
pub use loss::{compute_losses, loss_ccp, loss_classify, loss_mlm, loss_msp, loss_total, Losses};
pub use params::{
    load_checkpoint, save_checkpoint, CheckpointError, ClassifierParams, GradientSet,
    LayerParams, ModelConfig, ParameterSet,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
}
