//! Corpus ingestion, vocabularies, synthetic tasks, and batching.
//!
//! Datasets are addressed by spec strings:
//!
//! - `synth:<kind>[:len=MAX or MIN-MAX][:n=COUNT][:vocab=SIZE]` — generated
//!   copy/reverse/nested tasks, reproducible from the seed
//! - `file:PATH` — one example per line, source and target separated by one
//!   tab; dialogue sources separate utterances with a literal `<eos>`
//! - `file:SRC,TGT` — aligned translation files, one sentence per line

pub mod batch;
pub mod example;
pub mod synth;
pub mod vocab;

pub use batch::{make_batch, Batch, Batcher};
pub use example::{make_dialogue_example, make_translation_example, Example};
pub use synth::{synth_vocab, SynthKind, SynthSpec};
pub use vocab::{tokenize, Vocab, BOS, EOS, PAD, UNK};

use std::fmt;
use std::fs;
use std::path::Path;

use crate::model::Mode;
use crate::rng::Rng;

#[derive(Debug)]
pub enum DataError {
    Io(String, String),
    VocabCap(usize),
    EmptyHistory,
    EmptyDataset(String),
    BadSpec(String),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io(path, err) => write!(f, "io error on {path}: {err}"),
            DataError::VocabCap(cap) => {
                write!(f, "vocabulary cap {cap} cannot cover the 4 reserved tokens")
            }
            DataError::EmptyHistory => write!(f, "dialogue example with an empty history"),
            DataError::EmptyDataset(spec) => write!(f, "dataset {spec:?} produced no examples"),
            DataError::BadSpec(msg) => write!(f, "bad data spec: {msg}"),
        }
    }
}

impl std::error::Error for DataError {}

/// A loaded dataset with its vocabularies and fixed splits.
pub struct DataBundle {
    pub spec: String,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    /// Pairs dropped for having an empty side.
    pub skipped: usize,
}

impl DataBundle {
    pub fn summary(&self) -> String {
        format!(
            "{}: train {} / val {} / test {}, vocab {}+{}{}",
            self.spec,
            self.train.len(),
            self.val.len(),
            self.test.len(),
            self.src_vocab.size(),
            self.tgt_vocab.size(),
            if self.skipped > 0 {
                format!(", skipped {}", self.skipped)
            } else {
                String::new()
            }
        )
    }
}

/// Held-out split size for synthetic tasks.
fn synth_eval_size(n_train: usize) -> usize {
    n_train.min(64).max(16)
}

/// Loads a dataset from its spec string. `vocab_cap` bounds file-based
/// vocabularies; synthetic tasks define their own. The seed fixes synthetic
/// draws and the file split shuffle.
pub fn load_spec(
    spec: &str,
    mode: Mode,
    vocab_cap: usize,
    max_src_len: usize,
    seed: u64,
) -> Result<DataBundle, DataError> {
    if let Some(rest) = spec.strip_prefix("synth:") {
        return load_synth(spec, rest, seed);
    }
    if let Some(rest) = spec.strip_prefix("file:") {
        return load_files(spec, rest, mode, vocab_cap, max_src_len, seed);
    }
    Err(DataError::BadSpec(format!(
        "{spec:?} (expected synth:... or file:...)"
    )))
}

fn load_synth(full: &str, rest: &str, seed: u64) -> Result<DataBundle, DataError> {
    let mut parts = rest.split(':');
    let kind = SynthKind::parse(parts.next().unwrap_or(""))?;
    let mut spec = SynthSpec::new(kind, 64, 10, 20, seed);
    if kind == SynthKind::Nested {
        spec.vocab_size = 3;
        spec.len_max = 12;
        spec.len_min = 2;
    }
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| DataError::BadSpec(format!("expected key=value, got {part:?}")))?;
        match key {
            "len" => match value.split_once('-') {
                Some((lo, hi)) => {
                    spec.len_min = parse_num(lo, part)?;
                    spec.len_max = parse_num(hi, part)?;
                }
                None => {
                    spec.len_max = parse_num(value, part)?;
                    spec.len_min = 1.min(spec.len_max);
                }
            },
            "n" => spec.n_train = parse_num(value, part)?,
            "vocab" => spec.vocab_size = parse_num(value, part)?,
            other => {
                return Err(DataError::BadSpec(format!(
                    "unknown synth option {other:?} (len, n, vocab)"
                )))
            }
        }
    }
    if spec.len_min == 0 || spec.len_min > spec.len_max || spec.n_train == 0 || spec.vocab_size == 0
    {
        return Err(DataError::BadSpec(format!("degenerate synth spec {full:?}")));
    }
    let vocab = synth_vocab(&spec);
    let mut rng = Rng::new(seed).fork(0x5eed);
    let n_eval = synth_eval_size(spec.n_train);
    let train = synth::generate(&spec, spec.n_train, &mut rng);
    let val = synth::generate(&spec, n_eval, &mut rng);
    let test = synth::generate(&spec, n_eval, &mut rng);
    Ok(DataBundle {
        spec: full.to_string(),
        src_vocab: vocab.clone(),
        tgt_vocab: vocab,
        train,
        val,
        test,
        skipped: 0,
    })
}

fn parse_num(value: &str, ctx: &str) -> Result<usize, DataError> {
    value
        .parse()
        .map_err(|_| DataError::BadSpec(format!("bad value in {ctx:?}")))
}

fn read_lines(path: &str) -> Result<Vec<String>, DataError> {
    let text = fs::read_to_string(Path::new(path))
        .map_err(|e| DataError::Io(path.to_string(), e.to_string()))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

/// 90/5/5 split over a deterministic shuffle; every split keeps at least one
/// example when the corpus has three or more.
fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).fork(0x5717).shuffle(&mut order);
    let n_val = (n / 20).max(usize::from(n >= 3));
    let n_test = n_val;
    let n_train = n - n_val - n_test;
    let train = order[..n_train].to_vec();
    let val = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();
    (train, val, test)
}

fn load_files(
    full: &str,
    rest: &str,
    mode: Mode,
    vocab_cap: usize,
    max_src_len: usize,
    seed: u64,
) -> Result<DataBundle, DataError> {
    let (raw_src, raw_tgt): (Vec<String>, Vec<String>) = match rest.split_once(',') {
        Some((src_path, tgt_path)) => {
            let src = read_lines(src_path)?;
            let tgt = read_lines(tgt_path)?;
            if src.len() != tgt.len() {
                return Err(DataError::BadSpec(format!(
                    "aligned files differ in length: {} vs {} lines",
                    src.len(),
                    tgt.len()
                )));
            }
            (src, tgt)
        }
        None => {
            let mut src = Vec::new();
            let mut tgt = Vec::new();
            for line in read_lines(rest)? {
                if line.trim().is_empty() {
                    continue;
                }
                match line.split_once('\t') {
                    Some((s, t)) => {
                        src.push(s.to_string());
                        tgt.push(t.to_string());
                    }
                    None => {
                        return Err(DataError::BadSpec(format!(
                            "line without a tab separator in {rest}: {line:?}"
                        )))
                    }
                }
            }
            (src, tgt)
        }
    };
    if raw_src.is_empty() {
        return Err(DataError::EmptyDataset(full.to_string()));
    }
    let (train_idx, val_idx, test_idx) = split_indices(raw_src.len(), seed);

    // vocabularies come from the training split only
    let (src_vocab, tgt_vocab) = match mode {
        Mode::Dialogue => {
            let mut toks: Vec<String> = Vec::new();
            for &i in &train_idx {
                toks.extend(tokenize(&raw_src[i]));
                toks.extend(tokenize(&raw_tgt[i]));
            }
            let v = Vocab::build(toks.iter().map(String::as_str), vocab_cap)?;
            (v.clone(), v)
        }
        Mode::Translation => {
            let mut src_toks: Vec<String> = Vec::new();
            let mut tgt_toks: Vec<String> = Vec::new();
            for &i in &train_idx {
                src_toks.extend(tokenize(&raw_src[i]));
                tgt_toks.extend(tokenize(&raw_tgt[i]));
            }
            (
                Vocab::build(src_toks.iter().map(String::as_str), vocab_cap)?,
                Vocab::build(tgt_toks.iter().map(String::as_str), vocab_cap)?,
            )
        }
    };

    let mut skipped = 0usize;
    let mut build = |idx: &[usize]| -> Vec<Example> {
        idx.iter()
            .filter_map(|&i| {
                let made = match mode {
                    Mode::Dialogue => {
                        let history: Vec<String> = raw_src[i]
                            .split("<eos>")
                            .map(|u| u.trim().to_string())
                            .collect();
                        make_dialogue_example(&history, &raw_tgt[i], &src_vocab, max_src_len).ok()
                    }
                    Mode::Translation => make_translation_example(
                        &raw_src[i],
                        &raw_tgt[i],
                        &src_vocab,
                        &tgt_vocab,
                        max_src_len,
                    ),
                };
                if made.is_none() {
                    skipped += 1;
                }
                made
            })
            .collect()
    };
    let train = build(&train_idx);
    let val = build(&val_idx);
    let test = build(&test_idx);
    if train.is_empty() {
        return Err(DataError::EmptyDataset(full.to_string()));
    }
    Ok(DataBundle {
        spec: full.to_string(),
        src_vocab,
        tgt_vocab,
        train,
        val,
        test,
        skipped,
    })
}
