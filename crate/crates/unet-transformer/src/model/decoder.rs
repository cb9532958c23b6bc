//! The shared autoregressive decoder: masked self-attention, cross-attention
//! over the encoder output, feed-forward, all post-norm, then a projection to
//! the target vocabulary. Every encoder variant feeds this same decoder.

use crate::encoder::{EncodedLevels, LayerSchedule};
use crate::mask::{AttnMask, PadMask};
use crate::nn::attention::{AttentionConfig, MultiHeadAttention};
use crate::nn::blocks::{DropoutCtx, FeedForward, LayerNormBlock};
use crate::nn::embed::{sinusoidal_encoding, WordEmbedding};
use crate::nn::init::{init_parameter, scaled_sizes, InitSpec};
use crate::nn::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

struct DecoderLayer {
    self_attn: MultiHeadAttention,
    ln1: LayerNormBlock,
    cross_attn: MultiHeadAttention,
    ln2: LayerNormBlock,
    ff: FeedForward,
    ln3: LayerNormBlock,
    /// 1-based encoder level to cross-attend; `None` means the final output.
    cross_level: Option<usize>,
}

pub struct DecoderStack {
    pub d_model: usize,
    pub vocab: usize,
    emb: WordEmbedding,
    layers: Vec<DecoderLayer>,
    out_w: ParamId,
    out_b: ParamId,
}

impl DecoderStack {
    /// `per_layer_schedule` switches decoder layer `i` to cross-attend the
    /// encoder's layer-`i` output; its widths size the key/value projections.
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        d_model: usize,
        heads: usize,
        n_layers: usize,
        vocab: usize,
        per_layer_schedule: Option<&LayerSchedule>,
        rng: &mut Rng,
    ) -> Self {
        if let Some(s) = per_layer_schedule {
            assert_eq!(
                s.n_layers(),
                n_layers,
                "per-layer cross-attention needs matching encoder/decoder depths"
            );
        }
        let (d_inner, d_key, d_value) = scaled_sizes(d_model);
        let emb = WordEmbedding::new(ps, &format!("{prefix}.emb"), vocab, d_model, rng);
        let layers = (0..n_layers)
            .map(|i| {
                let lp = format!("{prefix}.layer{}", i + 1);
                let cross_kv = per_layer_schedule
                    .map(|s| s.layers[i].d_out)
                    .unwrap_or(d_model);
                DecoderLayer {
                    self_attn: MultiHeadAttention::new(
                        ps,
                        &format!("{lp}.self_attn"),
                        AttentionConfig {
                            d_query: d_model,
                            d_kv: d_model,
                            heads,
                            d_key,
                            d_value,
                        },
                        rng,
                    ),
                    ln1: LayerNormBlock::new(ps, &format!("{lp}.ln1"), d_model),
                    cross_attn: MultiHeadAttention::new(
                        ps,
                        &format!("{lp}.cross_attn"),
                        AttentionConfig {
                            d_query: d_model,
                            d_kv: cross_kv,
                            heads,
                            d_key,
                            d_value,
                        },
                        rng,
                    ),
                    ln2: LayerNormBlock::new(ps, &format!("{lp}.ln2"), d_model),
                    ff: FeedForward::new(ps, &format!("{lp}.ff"), d_model, d_inner, rng),
                    ln3: LayerNormBlock::new(ps, &format!("{lp}.ln3"), d_model),
                    cross_level: per_layer_schedule.map(|_| i + 1),
                }
            })
            .collect();
        DecoderStack {
            d_model,
            vocab,
            emb,
            layers,
            out_w: ps.add(
                format!("{prefix}.out.w"),
                init_parameter(InitSpec::xavier(), &[d_model, vocab], rng),
            ),
            out_b: ps.add(format!("{prefix}.out.b"), Tensor::zeros(vec![vocab])),
        }
    }

    /// Teacher-forced pass over the shifted target prefix: logits at row `t`
    /// depend only on target rows `<= t` (causal mask) and on the encoder.
    pub fn forward<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        tape: &mut Tape<F>,
        tgt_in: &[u32],
        tgt_mask: &PadMask,
        enc: &EncodedLevels,
        dctx: &mut DropoutCtx,
    ) -> Var {
        assert_eq!(tgt_in.len(), tgt_mask.len());
        let words = self.emb.forward(ps, tape, tgt_in);
        let pos = tape.constant(sinusoidal_encoding(tgt_in.len(), self.d_model));
        let mut h = tape.add(words, pos);
        let causal = AttnMask::causal(tgt_mask);
        for layer in &self.layers {
            let sa = layer
                .self_attn
                .forward(ps, tape, h, h, &causal, dctx);
            let sa = dctx.sublayer(tape, sa);
            let s1 = tape.add(h, sa);
            let h1 = layer.ln1.forward(ps, tape, s1);

            let (enc_var, enc_mask) = match layer.cross_level {
                Some(lvl) => layer_pair(enc, lvl),
                None => (enc.output(), enc.output_mask().clone()),
            };
            let cross_mask = AttnMask::keys_valid(tgt_in.len(), &enc_mask);
            let ca = layer
                .cross_attn
                .forward(ps, tape, h1, enc_var, &cross_mask, dctx);
            let ca = dctx.sublayer(tape, ca);
            let s2 = tape.add(h1, ca);
            let h2 = layer.ln2.forward(ps, tape, s2);

            let f = layer.ff.forward(ps, tape, h2);
            let f = dctx.sublayer(tape, f);
            let s3 = tape.add(h2, f);
            h = layer.ln3.forward(ps, tape, s3);
        }
        let w = tape.param(ps, self.out_w);
        let b = tape.param(ps, self.out_b);
        let logits = tape.matmul(h, w);
        tape.add_bias(logits, b)
    }
}

fn layer_pair(enc: &EncodedLevels, lvl: usize) -> (Var, PadMask) {
    let (v, m) = enc.layer(lvl);
    (*v, m.clone())
}
