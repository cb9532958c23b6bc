//! Single training examples and their construction rules.

use super::vocab::{tokenize, Vocab, BOS, EOS};
use super::DataError;

/// One source/target pair in id space. The target is always wrapped
/// `bos ... eos`; `segments` carries per-token utterance indices in dialogue
/// mode and zeros otherwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<u32>,
    pub segments: Vec<u32>,
    pub tgt: Vec<u32>,
}

impl Example {
    pub fn src_len(&self) -> usize {
        self.src.len()
    }

    /// Content tokens of the target (between bos and eos).
    pub fn tgt_content(&self) -> &[u32] {
        &self.tgt[1..self.tgt.len() - 1]
    }
}

/// Joins history utterances with `<eos>` separators, assigns utterance
/// indices, and keeps the most recent `max_src` tokens. The response is
/// bos-wrapped and never truncated.
pub fn make_dialogue_example(
    history: &[String],
    response: &str,
    vocab: &Vocab,
    max_src: usize,
) -> Result<Example, DataError> {
    let mut src = Vec::new();
    let mut segments = Vec::new();
    let mut utter = 0u32;
    for (i, utterance) in history.iter().enumerate() {
        let toks = tokenize(utterance);
        if toks.is_empty() {
            continue;
        }
        if utter > 0 {
            // the separator belongs to the utterance it closes
            src.push(EOS);
            segments.push(utter - 1);
        }
        let _ = i;
        for t in &toks {
            src.push(vocab.id(t));
            segments.push(utter);
        }
        utter += 1;
    }
    if src.is_empty() {
        return Err(DataError::EmptyHistory);
    }
    if src.len() > max_src {
        let start = src.len() - max_src;
        src.drain(..start);
        segments.drain(..start);
    }
    let mut tgt = vec![BOS];
    tgt.extend(tokenize(response).iter().map(|t| vocab.id(t)));
    tgt.push(EOS);
    Ok(Example { src, segments, tgt })
}

/// Translation pair with both sides truncated to `max_len` tokens and encoded
/// through their own vocabularies. Pairs with an empty side are skipped
/// (`Ok(None)`); the caller reports the skip count.
pub fn make_translation_example(
    src_line: &str,
    tgt_line: &str,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    max_len: usize,
) -> Option<Example> {
    let mut src_toks = tokenize(src_line);
    let mut tgt_toks = tokenize(tgt_line);
    if src_toks.is_empty() || tgt_toks.is_empty() {
        return None;
    }
    src_toks.truncate(max_len);
    tgt_toks.truncate(max_len);
    let src = src_vocab.encode(&src_toks);
    let mut tgt = vec![BOS];
    tgt.extend(tgt_vocab.encode(&tgt_toks));
    tgt.push(EOS);
    Some(Example {
        segments: vec![0; src.len()],
        src,
        tgt,
    })
}
