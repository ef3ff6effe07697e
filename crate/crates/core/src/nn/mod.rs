//! Reusable layers. Each layer is a set of [`ParamId`](crate::tensor::ParamId)
//! handles into a [`ParamStore`](crate::tensor::ParamStore) plus a forward
//! function that records onto a [`Graph`](crate::tensor::Graph).

mod attention;
mod init;
mod linear;
mod transformer;

pub use attention::{AttentionOutput, MultiHeadAttention};
pub use init::Init;
pub use linear::{FeedForward, LayerNorm, Linear, LN_EPS};
pub use transformer::TransformerBlock;
