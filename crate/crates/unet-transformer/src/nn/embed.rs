//! Token, positional, and per-utterance segment embeddings.

use crate::nn::init::{init_parameter, InitSpec};
use crate::nn::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Fixed sinusoidal position encoding:
/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(same)`.
pub fn sinusoidal_encoding<F: Scalar>(n: usize, d: usize) -> Tensor<F> {
    assert!(d % 2 == 0, "sinusoidal encoding needs an even width, got {d}");
    let mut data = vec![F::ZERO; n * d];
    for pos in 0..n {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[pos * d + 2 * i] = F::of(angle.sin());
            data[pos * d + 2 * i + 1] = F::of(angle.cos());
        }
    }
    Tensor::new(vec![n, d], data)
}

/// Learned token embedding table.
pub struct WordEmbedding {
    table: ParamId,
    pub vocab: usize,
    pub d: usize,
}

impl WordEmbedding {
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        vocab: usize,
        d: usize,
        rng: &mut Rng,
    ) -> Self {
        WordEmbedding {
            table: ps.add(
                format!("{prefix}.table"),
                init_parameter(InitSpec::xavier(), &[vocab, d], rng),
            ),
            vocab,
            d,
        }
    }

    pub fn forward<F: Scalar>(&self, ps: &ParamStore<F>, tape: &mut Tape<F>, ids: &[u32]) -> Var {
        let table = tape.param(ps, self.table);
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        tape.gather(table, &ids)
    }
}

/// Learned per-utterance-index offset, used in dialogue mode to mark which
/// utterance each token came from. Indices clamp to the last row, so overly
/// long conversations degrade instead of failing.
pub struct SegmentEmbedding {
    table: ParamId,
    pub s_max: usize,
    pub d: usize,
}

impl SegmentEmbedding {
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        s_max: usize,
        d: usize,
        rng: &mut Rng,
    ) -> Self {
        SegmentEmbedding {
            table: ps.add(
                format!("{prefix}.table"),
                init_parameter(InitSpec::xavier(), &[s_max, d], rng),
            ),
            s_max,
            d,
        }
    }

    pub fn forward<F: Scalar>(&self, ps: &ParamStore<F>, tape: &mut Tape<F>, ids: &[u32]) -> Var {
        let table = tape.param(ps, self.table);
        let clamped: Vec<usize> = ids
            .iter()
            .map(|&i| (i as usize).min(self.s_max - 1))
            .collect();
        tape.gather(table, &clamped)
    }
}
