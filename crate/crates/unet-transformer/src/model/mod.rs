//! Complete sequence-to-sequence models. All encoder variants — hourglass,
//! flat ablations, vanilla Transformer — feed the same decoder; the GRU
//! baseline replaces the encoder and decoder stacks with single recurrent
//! layers but shares the multi-head attention structure.

pub mod config;
pub mod decoder;
pub mod gru;
pub mod structure;

pub use config::{Mode, ModelConfig, Variant};
pub use structure::{LayerDesc, ModelStructure};

use crate::encoder::{EncodedLevels, EncoderStack, LayerRole};
use crate::mask::{AttnMask, PadMask};
use crate::nn::attention::{AttentionConfig, MultiHeadAttention};
use crate::nn::blocks::DropoutCtx;
use crate::nn::embed::{sinusoidal_encoding, SegmentEmbedding, WordEmbedding};
use crate::nn::init::{init_parameter, scaled_sizes, InitSpec};
use crate::nn::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

use decoder::DecoderStack;
use gru::GruCell;

enum Arch {
    Attention {
        src_emb: WordEmbedding,
        segment: Option<SegmentEmbedding>,
        encoder: EncoderStack,
        decoder: DecoderStack,
    },
    Recurrent {
        src_emb: WordEmbedding,
        tgt_emb: WordEmbedding,
        enc_cell: GruCell,
        dec_cell: GruCell,
        attn: MultiHeadAttention,
        out_w: ParamId,
        out_b: ParamId,
    },
}

pub struct Seq2SeqModel<F: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamStore<F>,
    arch: Arch,
}

/// Builds the configured variant with freshly initialized parameters.
pub fn build_model<F: Scalar>(cfg: ModelConfig, rng: &mut Rng) -> Result<Seq2SeqModel<F>, String> {
    cfg.validate()?;
    let mut ps: ParamStore<F> = ParamStore::new();
    let d = cfg.d_model;
    let arch = match cfg.variant {
        Variant::S2sa => {
            let (_, d_key, d_value) = scaled_sizes(d);
            Arch::Recurrent {
                src_emb: WordEmbedding::new(&mut ps, "src_emb", cfg.src_vocab, d, rng),
                tgt_emb: WordEmbedding::new(&mut ps, "dec.emb", cfg.tgt_vocab, d, rng),
                enc_cell: GruCell::new(&mut ps, "enc.gru", d, d, rng),
                dec_cell: GruCell::new(&mut ps, "dec.gru", d, d, rng),
                attn: MultiHeadAttention::new(
                    &mut ps,
                    "dec.attn",
                    AttentionConfig {
                        d_query: d,
                        d_kv: d,
                        heads: cfg.heads,
                        d_key,
                        d_value,
                    },
                    rng,
                ),
                out_w: ps.add(
                    "dec.out.w",
                    init_parameter(InitSpec::xavier(), &[d, cfg.tgt_vocab], rng),
                ),
                out_b: ps.add("dec.out.b", Tensor::zeros(vec![cfg.tgt_vocab])),
            }
        }
        variant => {
            let src_emb = WordEmbedding::new(&mut ps, "src_emb", cfg.src_vocab, d, rng);
            let segment = (cfg.segment_embeddings && cfg.mode == Mode::Dialogue)
                .then(|| SegmentEmbedding::new(&mut ps, "seg", cfg.s_max, d, rng));
            let encoder = match variant {
                Variant::Unet => {
                    EncoderStack::build_unet(&mut ps, "enc", d, cfg.n_down, cfg.heads, rng)
                }
                Variant::UnetNoDownup => EncoderStack::build_flat(
                    &mut ps,
                    "enc",
                    d,
                    cfg.n_layers,
                    cfg.heads,
                    true,
                    true,
                    rng,
                ),
                Variant::UnetNoDownupNoConv => EncoderStack::build_flat(
                    &mut ps,
                    "enc",
                    d,
                    cfg.n_layers,
                    cfg.heads,
                    false,
                    true,
                    rng,
                ),
                Variant::Transformer => EncoderStack::build_flat(
                    &mut ps,
                    "enc",
                    d,
                    cfg.n_layers,
                    cfg.heads,
                    false,
                    false,
                    rng,
                ),
                _ => unreachable!(),
            };
            let per_layer = cfg
                .per_layer_cross_attention
                .then(|| encoder.schedule.clone());
            let decoder = DecoderStack::new(
                &mut ps,
                "dec",
                d,
                cfg.heads,
                cfg.n_layers,
                cfg.tgt_vocab,
                per_layer.as_ref(),
                rng,
            );
            Arch::Attention {
                src_emb,
                segment,
                encoder,
                decoder,
            }
        }
    };
    Ok(Seq2SeqModel {
        cfg,
        params: ps,
        arch,
    })
}

impl<F: Scalar> Seq2SeqModel<F> {
    /// Encodes one (possibly right-padded) source row. Every variant returns
    /// a final level of shape `(N, d_model)` with padding rows zeroed.
    pub fn encode(
        &self,
        tape: &mut Tape<F>,
        src: &[u32],
        segments: &[u32],
        mask: &PadMask,
        dctx: &mut DropoutCtx,
    ) -> EncodedLevels {
        assert_eq!(src.len(), mask.len(), "source/mask length mismatch");
        let ps = &self.params;
        match &self.arch {
            Arch::Attention {
                src_emb,
                segment,
                encoder,
                ..
            } => {
                let words = src_emb.forward(ps, tape, src);
                let pos = tape.constant(sinusoidal_encoding(src.len(), self.cfg.d_model));
                let mut emb = tape.add(words, pos);
                if let Some(seg) = segment {
                    assert_eq!(segments.len(), src.len(), "segment ids must cover the source");
                    let s = seg.forward(ps, tape, segments);
                    emb = tape.add(emb, s);
                }
                encoder.forward(ps, tape, emb, mask, dctx)
            }
            Arch::Recurrent {
                src_emb, enc_cell, ..
            } => {
                let true_len = mask.prefix_len();
                assert_eq!(
                    true_len,
                    mask.valid_count(),
                    "recurrent encoder expects right-padding"
                );
                let emb = src_emb.forward(ps, tape, src);
                let emb = tape.zero_rows(emb, mask.flags());
                let mut h = tape.constant(Tensor::zeros(vec![1, self.cfg.d_model]));
                let mut states = Vec::with_capacity(true_len);
                for t in 0..true_len {
                    let x = tape.slice_rows(emb, t, 1);
                    h = enc_cell.step(ps, tape, x, h);
                    states.push(h);
                }
                let mut stacked = tape.concat_rows(&states);
                if true_len < mask.len() {
                    let pad = tape.constant(Tensor::zeros(vec![
                        mask.len() - true_len,
                        self.cfg.d_model,
                    ]));
                    stacked = tape.concat_rows(&[stacked, pad]);
                }
                EncodedLevels {
                    levels: vec![(emb, mask.clone()), (stacked, mask.clone())],
                }
            }
        }
    }

    /// Teacher-forced decoder logits `[T, V]` over a target prefix.
    pub fn decode_logits(
        &self,
        tape: &mut Tape<F>,
        enc: &EncodedLevels,
        tgt_in: &[u32],
        tgt_mask: &PadMask,
        dctx: &mut DropoutCtx,
    ) -> Var {
        let ps = &self.params;
        match &self.arch {
            Arch::Attention { decoder, .. } => {
                decoder.forward(ps, tape, tgt_in, tgt_mask, enc, dctx)
            }
            Arch::Recurrent {
                tgt_emb,
                dec_cell,
                attn,
                out_w,
                out_b,
                ..
            } => {
                let enc_states = enc.output();
                let enc_mask = enc.output_mask().clone();
                let true_len = enc_mask.prefix_len();
                let mut h = tape.slice_rows(enc_states, true_len - 1, 1);
                let words = tgt_emb.forward(ps, tape, tgt_in);
                let kv_mask = AttnMask::keys_valid(1, &enc_mask);
                let mut outs = Vec::with_capacity(tgt_in.len());
                for t in 0..tgt_in.len() {
                    let x = tape.slice_rows(words, t, 1);
                    h = dec_cell.step(ps, tape, x, h);
                    let ctx = attn.forward(ps, tape, h, enc_states, &kv_mask, dctx);
                    outs.push(tape.add(h, ctx));
                }
                let stacked = tape.concat_rows(&outs);
                let w = tape.param(ps, *out_w);
                let b = tape.param(ps, *out_b);
                let logits = tape.matmul(stacked, w);
                tape.add_bias(logits, b)
            }
        }
    }

    /// Summed negative log-likelihood and token count for one example under
    /// teacher forcing. `tgt` must be the bos-wrapped target row; padding
    /// positions contribute nothing.
    #[allow(clippy::too_many_arguments)]
    pub fn example_loss(
        &self,
        tape: &mut Tape<F>,
        src: &[u32],
        segments: &[u32],
        src_mask: &PadMask,
        tgt: &[u32],
        tgt_mask: &PadMask,
        dctx: &mut DropoutCtx,
    ) -> (Var, usize) {
        let t = tgt.len();
        assert!(t >= 2, "target must hold at least bos and one token");
        assert_eq!(t, tgt_mask.len());
        let tgt_in = &tgt[..t - 1];
        let in_mask = PadMask::from_flags(tgt_mask.flags()[..t - 1].to_vec());
        let tgt_out: Vec<usize> = tgt[1..].iter().map(|&x| x as usize).collect();
        let valid_out = tgt_mask.flags()[1..].to_vec();
        let enc = self.encode(tape, src, segments, src_mask, dctx);
        let logits = self.decode_logits(tape, &enc, tgt_in, &in_mask, dctx);
        tape.cross_entropy_rows(logits, &tgt_out, &valid_out)
    }

    pub fn n_scalars(&self) -> usize {
        self.params.n_scalars()
    }

    /// Wiring summary for structural comparison between variants.
    pub fn structure(&self) -> ModelStructure {
        let encoder_layers = match &self.arch {
            Arch::Attention { encoder, .. } => {
                let entries = encoder.layer_entry_transforms();
                encoder
                    .schedule
                    .layers
                    .iter()
                    .enumerate()
                    .map(|(idx, spec)| LayerDesc {
                        role: match spec.role {
                            LayerRole::Down => "down",
                            LayerRole::Up => "up",
                            LayerRole::Flat => "flat",
                        },
                        d_in: spec.d_in,
                        d_out: spec.d_out,
                        div_in: spec.div_in,
                        div_out: spec.div_out,
                        has_entry_transform: entries[idx],
                        skip_source: encoder.skip_source(idx + 1),
                    })
                    .collect()
            }
            Arch::Recurrent { .. } => vec![LayerDesc {
                role: "gru",
                d_in: self.cfg.d_model,
                d_out: self.cfg.d_model,
                div_in: 1,
                div_out: 1,
                has_entry_transform: false,
                skip_source: None,
            }],
        };
        ModelStructure {
            variant: self.cfg.variant.name(),
            encoder_layers,
            params: self
                .params
                .iter()
                .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
                .collect(),
            total_scalars: self.params.n_scalars(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> ModelConfig {
        let mut cfg = ModelConfig::tiny(variant, 8, 16, 16);
        if variant == Variant::S2sa {
            cfg.n_layers = 1;
        } else {
            cfg.n_layers = 6;
            cfg.n_down = 3;
        }
        cfg
    }

    fn logits_for(model: &Seq2SeqModel<f64>, src: &[u32], tgt_in: &[u32]) -> Vec<f64> {
        let mut tape = Tape::for_inference();
        let src_mask = PadMask::all_valid(src.len());
        let tgt_mask = PadMask::all_valid(tgt_in.len());
        let segs = vec![0u32; src.len()];
        let enc = model.encode(&mut tape, src, &segs, &src_mask, &mut DropoutCtx::off());
        let out = model.decode_logits(&mut tape, &enc, tgt_in, &tgt_mask, &mut DropoutCtx::off());
        tape.value(out).to_f64_vec()
    }

    #[test]
    fn decoder_is_causal_for_every_variant() {
        for variant in [
            Variant::Unet,
            Variant::UnetNoDownup,
            Variant::UnetNoDownupNoConv,
            Variant::Transformer,
            Variant::S2sa,
        ] {
            let mut rng = Rng::new(77);
            let model: Seq2SeqModel<f64> = build_model(tiny(variant), &mut rng).unwrap();
            let src = vec![4u32, 5, 6, 7, 8];
            let tgt: Vec<u32> = vec![2, 4, 5, 6, 7, 8];
            let v = model.cfg.tgt_vocab;
            for p in 2..tgt.len() {
                let mut poked = tgt.clone();
                poked[p] = 9;
                let a = logits_for(&model, &src, &tgt);
                let b = logits_for(&model, &src, &poked);
                for t in 0..p {
                    for c in 0..v {
                        assert_eq!(
                            a[t * v + c].to_bits(),
                            b[t * v + c].to_bits(),
                            "{variant:?}: logits at row {t} changed when editing row {p}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn one_step_decode_matches_prefix_of_longer_run() {
        let mut rng = Rng::new(3);
        let model: Seq2SeqModel<f64> = build_model(tiny(Variant::Unet), &mut rng).unwrap();
        let src = vec![4u32, 5, 6];
        let v = model.cfg.tgt_vocab;
        let long = logits_for(&model, &src, &[2, 4, 5]);
        let short = logits_for(&model, &src, &[2]);
        for c in 0..v {
            assert_eq!(short[c].to_bits(), long[c].to_bits());
        }
    }

    #[test]
    fn zero_parameters_give_uniform_logits() {
        let mut rng = Rng::new(4);
        let mut model: Seq2SeqModel<f64> =
            build_model(tiny(Variant::Transformer), &mut rng).unwrap();
        for id in model.params.ids().collect::<Vec<_>>() {
            let shape = model.params.value(id).shape().to_vec();
            model.params.set(id, Tensor::zeros(shape));
        }
        let v = model.cfg.tgt_vocab;
        let logits = logits_for(&model, &[4, 5], &[2, 4]);
        assert!(logits.iter().all(|&x| x == 0.0));
        let mut tape: Tape<f64> = Tape::new();
        let lv = tape.constant(Tensor::matrix(2, v, &logits));
        let (loss, count) = tape.cross_entropy_rows(lv, &[4, 3], &[true, true]);
        let ce = tape.value(loss).item() / count as f64;
        assert!((ce - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn skips_are_parameter_free() {
        let mut rng = Rng::new(5);
        let with_skips: Seq2SeqModel<f64> =
            build_model(tiny(Variant::UnetNoDownupNoConv), &mut rng).unwrap();
        let mut rng = Rng::new(5);
        let without: Seq2SeqModel<f64> =
            build_model(tiny(Variant::Transformer), &mut rng).unwrap();
        assert!(with_skips.structure().same_parameters(&without.structure()));
        assert_eq!(with_skips.n_scalars(), without.n_scalars());
    }

    #[test]
    fn ablation_lattice_structural_diffs() {
        let build = |variant| {
            let mut rng = Rng::new(6);
            let m: Seq2SeqModel<f64> = build_model(tiny(variant), &mut rng).unwrap();
            m.structure()
        };
        let unet = build(Variant::Unet);
        let no_downup = build(Variant::UnetNoDownup);
        let no_conv = build(Variant::UnetNoDownupNoConv);
        let vanilla = build(Variant::Transformer);

        // Same skip wiring and entry transforms everywhere in the first pair;
        // only the length/width schedule changes.
        for (a, b) in unet.encoder_layers.iter().zip(&no_downup.encoder_layers) {
            assert_eq!(a.skip_source, b.skip_source);
            assert_eq!(a.has_entry_transform, b.has_entry_transform);
        }
        assert!(unet.encoder_layers.iter().any(|l| l.div_out > 1));
        assert!(no_downup.encoder_layers.iter().all(|l| l.div_out == 1));

        // Conv removal changes exactly the conv parameters.
        let missing = no_downup.params_missing_from(&no_conv);
        assert!(!missing.is_empty());
        assert!(missing.iter().all(|n| n.contains(".conv.")));
        assert!(no_conv.params_missing_from(&no_downup).is_empty());
        for (a, b) in no_downup.encoder_layers.iter().zip(&no_conv.encoder_layers) {
            assert_eq!(a.skip_source, b.skip_source);
            assert_eq!(a.d_out, b.d_out);
        }

        // Skip removal is parameter-free.
        assert!(no_conv.same_parameters(&vanilla));
        assert!(no_conv
            .encoder_layers
            .iter()
            .skip(3)
            .all(|l| l.skip_source.is_some()));
        assert!(vanilla.encoder_layers.iter().all(|l| l.skip_source.is_none()));
    }

    #[test]
    fn per_layer_cross_attention_sizes_follow_schedule() {
        let mut cfg = tiny(Variant::Unet);
        cfg.per_layer_cross_attention = true;
        let mut rng = Rng::new(7);
        let model: Seq2SeqModel<f64> = build_model(cfg, &mut rng).unwrap();
        let st = model.structure();
        let widths: Vec<usize> = st.encoder_layers.iter().map(|l| l.d_out).collect();
        let wk3 = st
            .params
            .iter()
            .find(|(n, _)| n == "dec.layer3.cross_attn.wk")
            .map(|(_, s)| s.clone())
            .unwrap();
        assert_eq!(wk3[0], widths[2], "bottleneck width feeds layer 3 keys");
        let logits = logits_for(&model, &[4, 5, 6, 7, 8, 9, 10], &[2, 4]);
        assert!(logits.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn per_layer_flag_runs_differ_from_baseline() {
        let mut rng = Rng::new(8);
        let baseline: Seq2SeqModel<f64> = build_model(tiny(Variant::Unet), &mut rng).unwrap();
        let mut cfg = tiny(Variant::Unet);
        cfg.per_layer_cross_attention = true;
        let mut rng = Rng::new(8);
        let flagged: Seq2SeqModel<f64> = build_model(cfg, &mut rng).unwrap();
        let a = logits_for(&baseline, &[4, 5, 6, 7], &[2, 4]);
        let b = logits_for(&flagged, &[4, 5, 6, 7], &[2, 4]);
        assert_ne!(a, b);
    }
}
