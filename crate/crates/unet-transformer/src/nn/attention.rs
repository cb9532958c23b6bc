//! Multi-head scaled dot-product attention.
//!
//! Queries may come from a different width (and length) than keys/values:
//! down layers query with post-convolution tokens over pre-convolution
//! inputs, so the two sides project from different widths. The output is
//! projected back to the query-side width.

use crate::mask::AttnMask;
use crate::nn::blocks::DropoutCtx;
use crate::nn::init::{init_parameter, scaled_sizes, InitSpec};
use crate::nn::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub d_query: usize,
    pub d_kv: usize,
    pub heads: usize,
    pub d_key: usize,
    pub d_value: usize,
}

impl AttentionConfig {
    /// Per-head widths proportional to the query-side width (64 per head at
    /// width 256), with the head count fixed.
    pub fn proportional(d_query: usize, d_kv: usize, heads: usize) -> Self {
        let (_, d_key, d_value) = scaled_sizes(d_query);
        let cfg = AttentionConfig {
            d_query,
            d_kv,
            heads,
            d_key,
            d_value,
        };
        cfg.validate();
        cfg
    }

    pub fn validate(&self) {
        assert!(
            self.d_query > 0
                && self.d_kv > 0
                && self.heads > 0
                && self.d_key > 0
                && self.d_value > 0,
            "attention widths must be positive: {self:?}"
        );
    }
}

pub struct MultiHeadAttention {
    pub cfg: AttentionConfig,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

impl MultiHeadAttention {
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        cfg: AttentionConfig,
        rng: &mut Rng,
    ) -> Self {
        cfg.validate();
        let hk = cfg.heads * cfg.d_key;
        let hv = cfg.heads * cfg.d_value;
        MultiHeadAttention {
            cfg,
            wq: ps.add(
                format!("{prefix}.wq"),
                init_parameter(InitSpec::xavier(), &[cfg.d_query, hk], rng),
            ),
            bq: ps.add(format!("{prefix}.bq"), Tensor::zeros(vec![hk])),
            wk: ps.add(
                format!("{prefix}.wk"),
                init_parameter(InitSpec::xavier(), &[cfg.d_kv, hk], rng),
            ),
            bk: ps.add(format!("{prefix}.bk"), Tensor::zeros(vec![hk])),
            wv: ps.add(
                format!("{prefix}.wv"),
                init_parameter(InitSpec::xavier(), &[cfg.d_kv, hv], rng),
            ),
            bv: ps.add(format!("{prefix}.bv"), Tensor::zeros(vec![hv])),
            wo: ps.add(
                format!("{prefix}.wo"),
                init_parameter(InitSpec::xavier_scaled(), &[hv, cfg.d_query], rng),
            ),
            bo: ps.add(format!("{prefix}.bo"), Tensor::zeros(vec![cfg.d_query])),
        }
    }

    /// `q_in[Nq, d_query]` attends `kv_in[Nk, d_kv]` under `mask[Nq, Nk]`.
    /// Per head: scaled dot-product with masked positions at weight exactly
    /// zero; heads concatenate and project back to `d_query`.
    pub fn forward<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        tape: &mut Tape<F>,
        q_in: Var,
        kv_in: Var,
        mask: &AttnMask,
        dctx: &mut DropoutCtx,
    ) -> Var {
        let cfg = &self.cfg;
        assert_eq!(
            tape.value(q_in).cols(),
            cfg.d_query,
            "attention: query width {:?} vs configured {}",
            tape.value(q_in).shape(),
            cfg.d_query
        );
        assert_eq!(
            tape.value(kv_in).cols(),
            cfg.d_kv,
            "attention: key/value width {:?} vs configured {}",
            tape.value(kv_in).shape(),
            cfg.d_kv
        );
        let wq = tape.param(ps, self.wq);
        let bq = tape.param(ps, self.bq);
        let wk = tape.param(ps, self.wk);
        let bk = tape.param(ps, self.bk);
        let wv = tape.param(ps, self.wv);
        let bv = tape.param(ps, self.bv);
        let wo = tape.param(ps, self.wo);
        let bo = tape.param(ps, self.bo);

        let q = tape.matmul(q_in, wq);
        let q = tape.add_bias(q, bq);
        let k = tape.matmul(kv_in, wk);
        let k = tape.add_bias(k, bk);
        let v = tape.matmul(kv_in, wv);
        let v = tape.add_bias(v, bv);

        let scale = 1.0 / (cfg.d_key as f64).sqrt();
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = tape.slice_cols(q, h * cfg.d_key, cfg.d_key);
            let kh = tape.slice_cols(k, h * cfg.d_key, cfg.d_key);
            let vh = tape.slice_cols(v, h * cfg.d_value, cfg.d_value);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scores = tape.scale(scores, scale);
            let weights = tape.masked_softmax(scores, mask);
            let weights = dctx.attn_weights(tape, weights);
            heads.push(tape.matmul(weights, vh));
        }
        let ctx = tape.concat_cols(&heads);
        let out = tape.matmul(ctx, wo);
        tape.add_bias(out, bo)
    }
}
