//! Model variants and hyperparameters.

use serde::{Deserialize, Serialize};

/// Architecture selector. The four attention variants form the ablation
/// ladder; each adjacent pair differs by exactly one structural element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Full hourglass encoder with down/up resampling, convolutions, skips.
    Unet,
    /// Length-preserving layers, convolutions and mirror skips kept.
    UnetNoDownup,
    /// Mirror skips only; convolutions removed.
    UnetNoDownupNoConv,
    /// Vanilla Transformer encoder.
    Transformer,
    /// GRU sequence-to-sequence baseline with shared multi-head attention.
    S2sa,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant, String> {
        match s.to_ascii_lowercase().as_str() {
            "unet" => Ok(Variant::Unet),
            "unet-no-downup" => Ok(Variant::UnetNoDownup),
            "unet-no-downup-no-conv" => Ok(Variant::UnetNoDownupNoConv),
            "transformer" => Ok(Variant::Transformer),
            "s2sa" => Ok(Variant::S2sa),
            other => Err(format!(
                "unknown variant {other:?}; valid variants: {}",
                Variant::ALL_NAMES.join(", ")
            )),
        }
    }

    pub const ALL_NAMES: [&'static str; 5] = [
        "unet",
        "unet-no-downup",
        "unet-no-downup-no-conv",
        "transformer",
        "s2sa",
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Unet => "unet",
            Variant::UnetNoDownup => "unet-no-downup",
            Variant::UnetNoDownupNoConv => "unet-no-downup-no-conv",
            Variant::Transformer => "transformer",
            Variant::S2sa => "s2sa",
        }
    }

    /// Display label used in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Unet => "UNET",
            Variant::UnetNoDownup => "UNET - DOWN/UP",
            Variant::UnetNoDownupNoConv => "UNET - DOWN/UP - CONV",
            Variant::Transformer => "TRANSFORMER",
            Variant::S2sa => "S2SA",
        }
    }

    /// The four ablation rows, in table order: vanilla at the top, the full
    /// model at the bottom.
    pub fn ablation_order() -> [Variant; 4] {
        [
            Variant::Transformer,
            Variant::UnetNoDownupNoConv,
            Variant::UnetNoDownup,
            Variant::Unet,
        ]
    }
}

/// Task family; dialogue joins multi-utterance histories and adds segment
/// embeddings, translation keeps separate source/target vocabularies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Dialogue,
    Translation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub mode: Mode,
    pub d_model: usize,
    pub heads: usize,
    pub n_layers: usize,
    pub n_down: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub dropout: f64,
    /// Apply the shared dropout rate to attention weights.
    pub dropout_on_attn: bool,
    /// Apply the shared dropout rate to sub-layer outputs.
    pub dropout_on_sublayer: bool,
    pub segment_embeddings: bool,
    /// Experimental: decoder layer `i` cross-attends encoder layer `i`
    /// instead of the final encoder output. Hourglass variant only.
    pub per_layer_cross_attention: bool,
    /// Segment table rows; larger utterance indices clamp to the last row.
    pub s_max: usize,
    pub max_src_len: usize,
}

impl ModelConfig {
    /// Dialogue defaults: width 256, 6 layers, segment embeddings, no dropout.
    pub fn dialogue(variant: Variant, src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            variant,
            mode: Mode::Dialogue,
            d_model: 256,
            heads: 8,
            n_layers: if variant == Variant::S2sa { 1 } else { 6 },
            n_down: 3,
            src_vocab,
            tgt_vocab,
            dropout: 0.0,
            dropout_on_attn: true,
            dropout_on_sublayer: true,
            segment_embeddings: true,
            per_layer_cross_attention: false,
            s_max: 32,
            max_src_len: 150,
        }
    }

    /// Translation defaults: dropout 0.1, no segment embeddings, length 50.
    pub fn translation(variant: Variant, src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            mode: Mode::Translation,
            dropout: 0.1,
            segment_embeddings: false,
            max_src_len: 50,
            ..ModelConfig::dialogue(variant, src_vocab, tgt_vocab)
        }
    }

    /// Small configuration for tests and smoke runs.
    pub fn tiny(variant: Variant, d_model: usize, src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            d_model,
            heads: 2,
            segment_embeddings: false,
            mode: Mode::Translation,
            dropout: 0.0,
            max_src_len: 64,
            ..ModelConfig::dialogue(variant, src_vocab, tgt_vocab)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.d_model < 2 || self.d_model % 2 != 0 {
            return Err(format!("d_model must be even and >= 2, got {}", self.d_model));
        }
        if self.heads == 0 {
            return Err("heads must be positive".into());
        }
        if self.src_vocab < 5 || self.tgt_vocab < 5 {
            return Err("vocabularies must cover the four reserved tokens plus content".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} out of [0, 1)", self.dropout));
        }
        match self.variant {
            Variant::S2sa => {
                if self.n_layers != 1 {
                    return Err(format!(
                        "the GRU baseline is single-layer; got n_layers = {}",
                        self.n_layers
                    ));
                }
            }
            Variant::Unet => {
                if self.n_down == 0 || self.n_layers != 2 * self.n_down {
                    return Err(format!(
                        "hourglass needs n_layers = 2 * n_down, got {} and {}",
                        self.n_layers, self.n_down
                    ));
                }
            }
            _ => {
                if self.n_layers % 2 != 0 {
                    return Err(format!(
                        "mirror skips need an even n_layers, got {}",
                        self.n_layers
                    ));
                }
            }
        }
        if self.per_layer_cross_attention && self.variant != Variant::Unet {
            return Err(
                "per-layer cross-attention applies to the hourglass variant only".into(),
            );
        }
        if self.max_src_len == 0 {
            return Err("max_src_len must be positive".into());
        }
        Ok(())
    }
}
