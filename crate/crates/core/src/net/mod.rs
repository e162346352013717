//! Pyramid receptive-field depthwise-separable regressor.
//!
//! The network maps a normalised `(C, H, W)` image cube to three per-pixel
//! maps. An entry block of 1×1 convolutions with ReLU lifts the input to the
//! feature depth, a stack of residual pyramid blocks mixes spatial context,
//! and three 1×1 heads emit predictions, variances and second moments.
//!
//! A pyramid block runs its branches in parallel on the block input: one
//! depthwise-separable convolution per kernel size (1×1, 3×3, 5×5, 7×7 by
//! default) and a 3×3 max pool followed by a 1×1 convolution. Branch outputs
//! are concatenated along channels and fused by a 1×1 convolution + ReLU.
//! The block input is added back through an identity skip, or through a 1×1
//! convolution when the channel counts differ. The skip path carries no
//! activation and no normalisation.
//!
//! All convolutions use stride 1 and SAME padding (zeros for convolutions,
//! −∞ for pooling), so spatial size is preserved at every layer. Parameters
//! live in one flat `f32` buffer in declaration order, which is also the
//! order used by the optimizer and the checkpoint format.

mod checkpoint;
mod layers;
mod model;
mod ops;
mod tensor;

pub use checkpoint::{decode_model, encode_model, read_checkpoint, write_checkpoint, PRFX_MAGIC, PRFX_VERSION};
pub use layers::{
    format_branches, parse_branches, Branch, Layer, LayerCache, LayerKind, LayerSpec, DEFAULT_BRANCHES,
};
pub use model::{HeadGrads, Model, ModelCache, ModelConfig, ModelOutput, HEAD_NAMES};
pub use ops::{conv2d, max_pool, sepconv};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("invalid layer spec: {0}")]
    Spec(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("bad checkpoint magic {0:?}, expected \"PRFX\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint at byte {offset} (needed {needed} more)")]
    Truncated { offset: usize, needed: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;
