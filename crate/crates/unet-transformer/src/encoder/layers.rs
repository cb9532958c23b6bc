//! Encoder layers: halving (down), doubling (up), and length-preserving
//! (flat) variants. All three share the post-norm Transformer skeleton; they
//! differ in the entry transform and in where queries and keys come from.

use crate::mask::{AttnMask, PadMask};
use crate::nn::attention::{AttentionConfig, MultiHeadAttention};
use crate::nn::blocks::{DropoutCtx, FeedForward, LayerNormBlock};
use crate::nn::init::{init_parameter, InitSpec};
use crate::nn::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

use super::schedule::LayerSpec;

fn attention_for<F: Scalar>(
    ps: &mut ParamStore<F>,
    prefix: &str,
    d_query: usize,
    d_kv: usize,
    spec: &LayerSpec,
    heads: usize,
    rng: &mut Rng,
) -> MultiHeadAttention {
    MultiHeadAttention::new(
        ps,
        prefix,
        AttentionConfig {
            d_query,
            d_kv,
            heads,
            d_key: spec.d_key,
            d_value: spec.d_value,
        },
        rng,
    )
}

/// Shared tail of every layer: residual + norm around a sub-layer output,
/// then feed-forward with its own residual + norm (post-norm arrangement).
#[allow(clippy::too_many_arguments)]
fn residual_tail<F: Scalar>(
    ps: &ParamStore<F>,
    tape: &mut Tape<F>,
    base: Var,
    sublayer: Var,
    ln1: &LayerNormBlock,
    ff: &FeedForward,
    ln2: &LayerNormBlock,
    dctx: &mut DropoutCtx,
) -> Var {
    let sublayer = dctx.sublayer(tape, sublayer);
    let s1 = tape.add(base, sublayer);
    let h1 = ln1.forward(ps, tape, s1);
    let f = ff.forward(ps, tape, h1);
    let f = dctx.sublayer(tape, f);
    let s2 = tape.add(h1, f);
    ln2.forward(ps, tape, s2)
}

/// Down layer: k=3 convolution (stride 1) carrying the width change, stride-2
/// max pool halving the length, then attention where the pooled tokens query
/// the pre-convolution inputs, and the feed-forward tail. Padding rows are
/// zeroed on the way out and the pad mask pools alongside the tokens.
pub struct DownLayer {
    pub spec: LayerSpec,
    conv_w: ParamId,
    conv_b: ParamId,
    attn: MultiHeadAttention,
    ln1: LayerNormBlock,
    ff: FeedForward,
    ln2: LayerNormBlock,
}

impl DownLayer {
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        spec: LayerSpec,
        heads: usize,
        rng: &mut Rng,
    ) -> Self {
        DownLayer {
            conv_w: ps.add(
                format!("{prefix}.conv.w"),
                init_parameter(InitSpec::xavier(), &[3, spec.d_in, spec.d_out], rng),
            ),
            conv_b: ps.add(format!("{prefix}.conv.b"), Tensor::zeros(vec![spec.d_out])),
            attn: attention_for(
                ps,
                &format!("{prefix}.attn"),
                spec.d_out,
                spec.d_in,
                &spec,
                heads,
                rng,
            ),
            ln1: LayerNormBlock::new(ps, &format!("{prefix}.ln1"), spec.d_out),
            ff: FeedForward::new(ps, &format!("{prefix}.ff"), spec.d_out, spec.d_inner, rng),
            ln2: LayerNormBlock::new(ps, &format!("{prefix}.ln2"), spec.d_out),
            spec,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        tape: &mut Tape<F>,
        x: Var,
        mask: &PadMask,
        dctx: &mut DropoutCtx,
    ) -> (Var, PadMask) {
        let w = tape.param(ps, self.conv_w);
        let b = tape.param(ps, self.conv_b);
        let c = tape.conv1d(x, w, b, 1);
        let pooled = tape.max_pool1d(c);
        let out_mask = mask.propagate();
        // Pooled (abstract) tokens query the pre-convolution inputs; only
        // non-pad inputs are visible. Pad query rows get zeroed below.
        let amask = AttnMask::keys_valid(out_mask.len(), mask);
        let a = self.attn.forward(ps, tape, pooled, x, &amask, dctx);
        let h = residual_tail(ps, tape, pooled, a, &self.ln1, &self.ff, &self.ln2, dctx);
        let y = tape.zero_rows(h, out_mask.flags());
        (y, out_mask)
    }
}

/// Up layer: stride-2 deconvolution doubles the length and carries the width
/// change, the output is cropped to the recorded down-path length, the skip
/// is added element-wise, and self-attention plus feed-forward run over the
/// combined tokens.
pub struct UpLayer {
    pub spec: LayerSpec,
    deconv_w: ParamId,
    attn: MultiHeadAttention,
    ln1: LayerNormBlock,
    ff: FeedForward,
    ln2: LayerNormBlock,
}

impl UpLayer {
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        spec: LayerSpec,
        heads: usize,
        rng: &mut Rng,
    ) -> Self {
        UpLayer {
            deconv_w: ps.add(
                format!("{prefix}.deconv.w"),
                init_parameter(InitSpec::xavier(), &[3, spec.d_in, spec.d_out], rng),
            ),
            attn: attention_for(
                ps,
                &format!("{prefix}.attn"),
                spec.d_out,
                spec.d_out,
                &spec,
                heads,
                rng,
            ),
            ln1: LayerNormBlock::new(ps, &format!("{prefix}.ln1"), spec.d_out),
            ff: FeedForward::new(ps, &format!("{prefix}.ff"), spec.d_out, spec.d_inner, rng),
            ln2: LayerNormBlock::new(ps, &format!("{prefix}.ln2"), spec.d_out),
            spec,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        tape: &mut Tape<F>,
        x: Var,
        skip: Var,
        skip_mask: &PadMask,
        dctx: &mut DropoutCtx,
    ) -> Var {
        let m = tape.value(x).rows();
        let target_len = skip_mask.len();
        assert!(
            target_len == 2 * m || target_len + 1 == 2 * m,
            "up layer: cannot reach length {target_len} from {m} tokens"
        );
        let skip_shape = tape.value(skip).shape().to_vec();
        assert_eq!(
            skip_shape,
            vec![target_len, self.spec.d_out],
            "up layer: skip shape {:?} does not match deconv output [{target_len}, {}]",
            skip_shape,
            self.spec.d_out
        );
        let w = tape.param(ps, self.deconv_w);
        let up = tape.deconv1d(x, w);
        let up = if target_len < 2 * m {
            tape.slice_rows(up, 0, target_len)
        } else {
            up
        };
        let combined = tape.add(up, skip);
        let amask = AttnMask::keys_valid(target_len, skip_mask);
        let a = self.attn.forward(ps, tape, combined, combined, &amask, dctx);
        let h = residual_tail(ps, tape, combined, a, &self.ln1, &self.ff, &self.ln2, dctx);
        tape.zero_rows(h, skip_mask.flags())
    }
}

/// Length-preserving layer for the ablation variants and the vanilla
/// Transformer: optional k=3 convolution at the entry, optional additive
/// skip, attention with post-entry queries over the pre-entry inputs.
pub struct FlatLayer {
    pub spec: LayerSpec,
    conv: Option<(ParamId, ParamId)>,
    attn: MultiHeadAttention,
    ln1: LayerNormBlock,
    ff: FeedForward,
    ln2: LayerNormBlock,
}

impl FlatLayer {
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        spec: LayerSpec,
        heads: usize,
        with_conv: bool,
        rng: &mut Rng,
    ) -> Self {
        FlatLayer {
            conv: with_conv.then(|| {
                (
                    ps.add(
                        format!("{prefix}.conv.w"),
                        init_parameter(InitSpec::xavier(), &[3, spec.d_in, spec.d_out], rng),
                    ),
                    ps.add(format!("{prefix}.conv.b"), Tensor::zeros(vec![spec.d_out])),
                )
            }),
            attn: attention_for(
                ps,
                &format!("{prefix}.attn"),
                spec.d_out,
                spec.d_in,
                &spec,
                heads,
                rng,
            ),
            ln1: LayerNormBlock::new(ps, &format!("{prefix}.ln1"), spec.d_out),
            ff: FeedForward::new(ps, &format!("{prefix}.ff"), spec.d_out, spec.d_inner, rng),
            ln2: LayerNormBlock::new(ps, &format!("{prefix}.ln2"), spec.d_out),
            spec,
        }
    }

    pub fn has_conv(&self) -> bool {
        self.conv.is_some()
    }

    pub fn forward<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        tape: &mut Tape<F>,
        x: Var,
        skip: Option<Var>,
        mask: &PadMask,
        dctx: &mut DropoutCtx,
    ) -> Var {
        let entry = match self.conv {
            Some((w, b)) => {
                let w = tape.param(ps, w);
                let b = tape.param(ps, b);
                tape.conv1d(x, w, b, 1)
            }
            None => x,
        };
        let entry = match skip {
            Some(s) => tape.add(entry, s),
            None => entry,
        };
        let amask = AttnMask::keys_valid(mask.len(), mask);
        let a = self.attn.forward(ps, tape, entry, x, &amask, dctx);
        let h = residual_tail(ps, tape, entry, a, &self.ln1, &self.ff, &self.ln2, dctx);
        tape.zero_rows(h, mask.flags())
    }
}
