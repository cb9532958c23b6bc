//! Frequency-capped vocabulary with the four reserved tokens.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::DataError;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Token <-> id bijection. Ids 0..=3 are pad/unk/bos/eos; content tokens
/// follow in frequency order (ties broken lexicographically).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Lowercased whitespace tokenization. Pre-tokenized input (including BPE
/// output) passes through unchanged apart from the lowercasing.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect()
}

impl Vocab {
    /// Keeps the `cap - 4` most frequent tokens from the stream. Reserved
    /// forms in the stream (separator `<eos>` and friends) are not counted
    /// as content.
    pub fn build<'a>(
        tokens: impl IntoIterator<Item = &'a str>,
        cap: usize,
    ) -> Result<Vocab, DataError> {
        if cap < 5 {
            return Err(DataError::VocabCap(cap));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for t in tokens {
            if RESERVED.contains(&t) {
                continue;
            }
            *counts.entry(t).or_insert(0) += 1;
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap - 4);
        Ok(Vocab::from_content_tokens(
            ranked.into_iter().map(|(t, _)| t.to_string()).collect(),
        ))
    }

    /// Vocabulary from an explicit content token list (ids assigned in order).
    pub fn from_content_tokens(tokens: Vec<String>) -> Vocab {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            assert!(!RESERVED.contains(&t.as_str()), "reserved form {t:?} as content");
            let prev = index.insert(t.clone(), (i + 4) as u32);
            assert!(prev.is_none(), "duplicate token {t:?}");
        }
        Vocab { tokens, index }
    }

    pub fn size(&self) -> usize {
        self.tokens.len() + 4
    }

    pub fn id(&self, token: &str) -> u32 {
        match token {
            "<pad>" => PAD,
            "<unk>" => UNK,
            "<bos>" => BOS,
            "<eos>" => EOS,
            t => self.index.get(t).copied().unwrap_or(UNK),
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        match id {
            0..=3 => RESERVED[id as usize],
            _ => &self.tokens[id as usize - 4],
        }
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// One content token per line; line `k` holds the token with id `k + 4`.
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        for t in &self.tokens {
            let _ = writeln!(out, "{t}");
        }
        fs::write(path, out).map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Vocab, DataError> {
        let text = fs::read_to_string(path)
            .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
        Ok(Vocab::from_content_tokens(
            text.lines().map(|l| l.to_string()).collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_plus_frequency_order() {
        let v = Vocab::build(["a", "a", "b"], 6).unwrap();
        assert_eq!(v.size(), 6);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn lower_frequency_token_dropped_at_cap() {
        let v = Vocab::build(["a", "a", "b"], 5).unwrap();
        assert_eq!(v.size(), 5);
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
    }

    #[test]
    fn frequency_ties_break_lexicographically() {
        let v = Vocab::build(["beta", "alpha"], 5).unwrap();
        assert!(v.contains("alpha"));
        assert!(!v.contains("beta"));
    }

    #[test]
    fn cap_below_reserved_rejected() {
        assert!(matches!(Vocab::build(["a"], 4), Err(DataError::VocabCap(4))));
    }

    #[test]
    fn round_trip_with_unk_for_oov() {
        let v = Vocab::build(["the", "cat", "the"], 10).unwrap();
        let toks = tokenize("The cat DOG");
        let ids = v.encode(&toks);
        assert_eq!(ids, vec![4, 5, UNK]);
        assert_eq!(v.decode(&ids), vec!["the", "cat", "<unk>"]);
    }

    #[test]
    fn save_load_preserves_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocab::build(["x", "y", "x", "z"], 7).unwrap();
        v.save(&path).unwrap();
        let w = Vocab::load(&path).unwrap();
        assert_eq!(v, w);
    }
}
