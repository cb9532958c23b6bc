//! Reusable network building blocks: multi-head attention with independent
//! query-side and key/value-side widths, the position-wise feed-forward
//! block, positional and segment embeddings, and the initialization schemes.

pub mod attention;
pub mod blocks;
pub mod embed;
pub mod init;
pub mod params;

pub use attention::{AttentionConfig, MultiHeadAttention};
pub use blocks::{DropoutCtx, FeedForward, LayerNormBlock};
pub use embed::{sinusoidal_encoding, SegmentEmbedding, WordEmbedding};
pub use init::{init_parameter, scaled_sizes, InitSpec};
pub use params::{ParamId, ParamStore};
