//! Corpus-level BLEU-4: geometric mean of clipped n-gram precisions times a
//! brevity penalty. No smoothing — a zero precision zeroes the score — so
//! values are bit-comparable across implementations given the same
//! tokenization.

use std::collections::HashMap;

use super::EvalError;

#[derive(Clone, Debug)]
pub struct BleuReport {
    /// Corpus score in [0, 100].
    pub score: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// One reference per hypothesis, already tokenized.
pub fn corpus_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<BleuReport, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::Bleu(format!(
            "{} hypotheses vs {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if refs.iter().any(|r| r.is_empty()) {
        return Err(EvalError::Bleu("empty reference".into()));
    }
    let mut matches = [0u64; 4];
    let mut totals = [0u64; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in hyps.iter().zip(refs) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=4usize {
            let hyp_grams = ngram_counts(hyp, n);
            let ref_grams = ngram_counts(reference, n);
            for (gram, &count) in &hyp_grams {
                let clipped = count.min(ref_grams.get(gram).copied().unwrap_or(0));
                matches[n - 1] += clipped;
            }
            totals[n - 1] += hyp.len().saturating_sub(n - 1) as u64;
        }
    }
    let mut precisions = [0.0f64; 4];
    for n in 0..4 {
        precisions[n] = if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn identical_corpus_scores_one_hundred() {
        let corpus = vec![toks("the quick brown fox jumps"), toks("over the lazy dog today")];
        let report = corpus_bleu(&corpus, &corpus).unwrap();
        assert!((report.score - 100.0).abs() < 1e-9, "{report:?}");
        assert_eq!(report.brevity_penalty, 1.0);
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        let report = corpus_bleu(&[vec![]], &[toks("a b c d")]).unwrap();
        assert_eq!(report.score, 0.0);
    }

    #[test]
    fn clipping_matches_hand_computation() {
        // clipped unigram precision 2/7: "the" appears at most twice in the
        // reference; the degenerate bigram kills the overall score
        let report = corpus_bleu(
            &[toks("the the the the the the the")],
            &[toks("the cat is on the mat")],
        )
        .unwrap();
        assert_eq!(report.precisions[0], 2.0 / 7.0);
        assert_eq!(report.precisions[1], 0.0);
        assert_eq!(report.score, 0.0);
    }

    #[test]
    fn brevity_penalty_engages_for_short_output() {
        let report = corpus_bleu(&[toks("a b c d")], &[toks("a b c d e f g h")]).unwrap();
        assert!((report.brevity_penalty - (1.0f64 - 8.0 / 4.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn empty_reference_rejected() {
        assert!(corpus_bleu(&[toks("a")], &[vec![]]).is_err());
        assert!(corpus_bleu(&[toks("a")], &[]).is_err());
    }
}
