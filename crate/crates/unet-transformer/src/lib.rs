//! Hourglass (U-Net style) Transformer for sequence-to-sequence modeling.
//!
//! The encoder shrinks the token sequence with strided pooling while growing
//! the representation width, then restores the original resolution with
//! strided deconvolutions and additive skip connections. Everything runs on a
//! small tape-based reverse-mode autodiff engine written from scratch, so the
//! whole stack — kernels, attention, training loop, decoding — is inspectable
//! and gradient-checked against central differences.
//!
//! Crate layout:
//!
//! - [`tensor`] — dense tensors, the autodiff tape, and the gradient checker
//! - [`nn`] — attention, feed-forward, embeddings, initialization schemes
//! - [`encoder`] — the hourglass encoder stack and its layer schedule
//! - [`model`] — full seq2seq models: hourglass, vanilla Transformer,
//!   ablation variants, and a GRU baseline sharing the same decoder
//! - [`data`] — vocabularies, corpus ingestion, synthetic tasks, batching
//! - [`train`] — Adam, learning-rate schedules, the training loop, checkpoints
//! - [`eval`] — greedy/beam decoding, perplexity, BLEU
//! - [`cli`] — the `unet-transformer` command-line entry point
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod data;
pub mod encoder;
pub mod eval;
pub mod gradsuite;
pub mod mask;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;
pub(crate) mod util;

pub use mask::{AttnMask, PadMask};
pub use model::{build_model, ModelConfig, Seq2SeqModel, Variant};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::{Tape, Tensor, Var};
