//! CrossFusion survival model.

pub mod blocks;
mod checkpoint;
mod config;
mod crossfusion;

pub use blocks::{square_pad, square_pad_indices, square_side, Conv2d, ConvProcessor, CrossAttentionBlock, PadTransformer, Ppeg};
pub use checkpoint::CKPT_MAGIC;
pub use config::{ModelConfig, Variant};
pub use crossfusion::{min_max_normalize, AttentionVars, CrossFusion, ForwardOutput, SurvivalOutput, MAP_NAMES};
