//! Evaluation: cross-entropy/perplexity, decoding whole sets, and BLEU.

pub mod bleu;
pub mod decode;

pub use bleu::{corpus_bleu, BleuReport};
pub use decode::{beam_search, greedy_decode, DecodeRule};

use std::fmt;

use crate::data::{make_batch, Example, Vocab, BOS, EOS, PAD, UNK};
use crate::encoder::EncodedLevels;
use crate::mask::PadMask;
use crate::model::Seq2SeqModel;
use crate::nn::blocks::DropoutCtx;
use crate::scalar::Scalar;
use crate::tensor::Tape;

#[derive(Debug)]
pub enum EvalError {
    Bleu(String),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::Bleu(msg) => write!(f, "bleu: {msg}"),
        }
    }
}

impl std::error::Error for EvalError {}

/// Mean cross-entropy in nats per non-pad target token over a whole set,
/// dropout-free. The token-level mean makes the value independent of the
/// batch size used here.
pub fn evaluate_ce<F: Scalar>(
    model: &Seq2SeqModel<F>,
    examples: &[Example],
    batch_size: usize,
) -> f64 {
    assert!(!examples.is_empty(), "evaluating an empty set");
    let mut total_nll = 0.0f64;
    let mut total_count = 0usize;
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let batch = make_batch(&refs);
        let mut tape = Tape::for_inference();
        for i in 0..batch.len() {
            let (nll, count) = model.example_loss(
                &mut tape,
                &batch.src[i],
                &batch.segments[i],
                &batch.src_masks[i],
                &batch.tgt[i],
                &batch.tgt_masks[i],
                &mut DropoutCtx::off(),
            );
            total_nll += tape.value(nll).item().to_f64();
            total_count += count;
        }
    }
    total_nll / total_count as f64
}

/// `exp(ce)`: per-token perplexity from mean nats per token.
pub fn perplexity(ce: f64) -> f64 {
    ce.exp()
}

/// Incremental decoding context for one source sequence: the source is
/// encoded once, then each scorer call re-runs the decoder over the prefix.
pub struct DecodeSession<'m, F: Scalar> {
    model: &'m Seq2SeqModel<F>,
    tape: Tape<F>,
    enc: EncodedLevels,
}

impl<'m, F: Scalar> DecodeSession<'m, F> {
    pub fn new(model: &'m Seq2SeqModel<F>, src: &[u32], segments: &[u32]) -> Self {
        let mut tape = Tape::for_inference();
        let mask = PadMask::all_valid(src.len());
        let enc = model.encode(&mut tape, src, segments, &mask, &mut DropoutCtx::off());
        DecodeSession { model, tape, enc }
    }

    /// Log-probabilities of the next token after the generated prefix.
    pub fn next_logprobs(&mut self, generated: &[u32]) -> Vec<f64> {
        let mut prefix = Vec::with_capacity(generated.len() + 1);
        prefix.push(BOS);
        prefix.extend_from_slice(generated);
        let mask = PadMask::all_valid(prefix.len());
        let logits = self.model.decode_logits(
            &mut self.tape,
            &self.enc,
            &prefix,
            &mask,
            &mut DropoutCtx::off(),
        );
        let value = self.tape.value(logits);
        let v = value.cols();
        let last = &value.data()[(prefix.len() - 1) * v..];
        let row: Vec<f64> = last.iter().map(|x| x.to_f64()).collect();
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
        row.iter().map(|x| x - mx - z.ln()).collect()
    }
}

/// Decoding rule for real models: pad/unk/bos never come out, and the output
/// caps at `2 * source length + 5` tokens.
pub fn model_rule(src_len: usize) -> DecodeRule {
    DecodeRule {
        eos: EOS,
        banned: vec![PAD, UNK, BOS],
        max_len: 2 * src_len + 5,
    }
}

/// Decodes one source; `beam <= 1` is greedy.
pub fn decode_tokens<F: Scalar>(
    model: &Seq2SeqModel<F>,
    src: &[u32],
    segments: &[u32],
    beam: usize,
) -> Vec<u32> {
    let mut session = DecodeSession::new(model, src, segments);
    let rule = model_rule(src.len());
    let mut scorer = |prefix: &[u32]| session.next_logprobs(prefix);
    if beam <= 1 {
        greedy_decode(&mut scorer, &rule).0
    } else {
        beam_search(&mut scorer, beam, &rule).0
    }
}

/// Fraction of examples whose decoded output equals the target content
/// exactly.
pub fn exact_match_rate<F: Scalar>(
    model: &Seq2SeqModel<F>,
    examples: &[Example],
    beam: usize,
) -> f64 {
    assert!(!examples.is_empty());
    let hits = examples
        .iter()
        .filter(|ex| decode_tokens(model, &ex.src, &ex.segments, beam) == ex.tgt_content())
        .count();
    hits as f64 / examples.len() as f64
}

/// Decodes a set and scores it against the target contents.
pub fn bleu_on_set<F: Scalar>(
    model: &Seq2SeqModel<F>,
    examples: &[Example],
    tgt_vocab: &Vocab,
    beam: usize,
) -> Result<BleuReport, EvalError> {
    let mut hyps = Vec::with_capacity(examples.len());
    let mut refs = Vec::with_capacity(examples.len());
    for ex in examples {
        let out = decode_tokens(model, &ex.src, &ex.segments, beam);
        hyps.push(tgt_vocab.decode(&out));
        refs.push(tgt_vocab.decode(ex.tgt_content()));
    }
    corpus_bleu(&hyps, &refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perplexity_is_exp_of_ce() {
        assert_eq!(perplexity(0.0), 1.0);
        let v = 20000.0f64;
        assert!((perplexity(v.ln()) - v).abs() / v < 1e-12);
        assert!((perplexity(3.8474) - 46.87).abs() < 0.05);
    }
}
