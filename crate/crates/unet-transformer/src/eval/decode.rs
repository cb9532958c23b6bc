//! Greedy and beam decoding over an abstract next-token scorer.
//!
//! Both searches share one candidate ordering: higher log-probability first,
//! a tie between the end token and a content token goes to the content token,
//! remaining ties to the lowest id. Beam width 1 therefore reproduces greedy
//! decoding exactly.

/// Decoding constraints: the end token, ids never emitted (pad/unk/bos for
/// real models), and the output length cap.
#[derive(Clone, Debug)]
pub struct DecodeRule {
    pub eos: u32,
    pub banned: Vec<u32>,
    pub max_len: usize,
}

impl DecodeRule {
    fn allowed(&self, tok: u32) -> bool {
        !self.banned.contains(&tok)
    }
}

/// Candidate ordering key; sorting ascending puts the best candidate first.
fn rank_key(score: f64, tok: u32, eos: u32) -> (std::cmp::Reverse<ordered::F64>, bool, u32) {
    (
        std::cmp::Reverse(ordered::F64(score)),
        tok == eos, // content tokens beat the end token on exact ties
        tok,
    )
}

mod ordered {
    /// Total order over f64 for sort keys; scores are finite by construction.
    #[derive(PartialEq)]
    pub struct F64(pub f64);
    impl Eq for F64 {}
    impl PartialOrd for F64 {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for F64 {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0)
        }
    }
}

/// Argmax decoding. Returns generated content tokens (end token excluded)
/// and the total log-probability of the traversed path including the end
/// token when one was emitted.
pub fn greedy_decode(
    next_logprobs: &mut dyn FnMut(&[u32]) -> Vec<f64>,
    rule: &DecodeRule,
) -> (Vec<u32>, f64) {
    let mut tokens: Vec<u32> = Vec::new();
    let mut total = 0.0;
    for _ in 0..rule.max_len {
        let logp = next_logprobs(&tokens);
        let best = (0..logp.len() as u32)
            .filter(|&t| rule.allowed(t))
            .min_by_key(|&t| rank_key(logp[t as usize], t, rule.eos))
            .expect("no allowed tokens to decode");
        total += logp[best as usize];
        if best == rule.eos {
            break;
        }
        tokens.push(best);
    }
    (tokens, total)
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<u32>,
    score: f64,
}

/// Beam search over total log-probability, no length normalization.
/// Hypotheses that emit the end token retire; the best retired hypothesis
/// wins, falling back to live ones when nothing finished under the cap.
pub fn beam_search(
    next_logprobs: &mut dyn FnMut(&[u32]) -> Vec<f64>,
    beam: usize,
    rule: &DecodeRule,
) -> (Vec<u32>, f64) {
    assert!(beam >= 1, "beam width must be at least 1");
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..rule.max_len {
        let mut candidates: Vec<(f64, u32, usize)> = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            let logp = next_logprobs(&h.tokens);
            for t in 0..logp.len() as u32 {
                if rule.allowed(t) {
                    candidates.push((h.score + logp[t as usize], t, hi));
                }
            }
        }
        candidates.sort_by_key(|&(s, t, hi)| (rank_key(s, t, rule.eos), hi));
        let mut next_live = Vec::with_capacity(beam);
        for &(score, tok, hi) in candidates.iter().take(beam) {
            if tok == rule.eos {
                finished.push(Hypothesis {
                    tokens: live[hi].tokens.clone(),
                    score,
                });
            } else {
                let mut tokens = live[hi].tokens.clone();
                tokens.push(tok);
                next_live.push(Hypothesis { tokens, score });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }
    finished.extend(live);
    let best = finished
        .into_iter()
        .min_by(|a, b| {
            a.score
                .total_cmp(&b.score)
                .reverse()
                .then_with(|| a.tokens.cmp(&b.tokens))
        })
        .expect("beam search always holds at least one hypothesis");
    (best.tokens, best.score)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Toy three-token language model (ids 0, 1 content; 2 = eos) with
    /// hand-set conditional probabilities. Anything not listed falls back to
    /// a uniform distribution.
    fn toy_lm(prefix: &[u32]) -> Vec<f64> {
        let table: &[(&[u32], [f64; 3])] = &[
            (&[], [0.5, 0.45, 0.05]),
            (&[0], [0.2, 0.3, 0.5]),
            (&[1], [0.9, 0.05, 0.05]),
            (&[1, 0], [0.02, 0.03, 0.95]),
        ];
        let probs = table
            .iter()
            .find(|(p, _)| *p == prefix)
            .map(|(_, ps)| *ps)
            .unwrap_or([1.0 / 3.0; 3]);
        probs.iter().map(|p| p.ln()).collect()
    }

    fn rule(max_len: usize) -> DecodeRule {
        DecodeRule {
            eos: 2,
            banned: vec![],
            max_len,
        }
    }

    /// Exhaustive search over every sequence of up to `max_len` emissions.
    fn exhaustive_argmax(max_len: usize) -> (Vec<u32>, f64) {
        fn recurse(
            prefix: &mut Vec<u32>,
            score: f64,
            depth: usize,
            best: &mut (Vec<u32>, f64),
        ) {
            if depth == 0 {
                if score > best.1 {
                    *best = (prefix.clone(), score);
                }
                return;
            }
            let logp = toy_lm(prefix);
            for t in 0..3u32 {
                let s = score + logp[t as usize];
                if t == 2 {
                    if s > best.1 {
                        *best = (prefix.clone(), s);
                    }
                } else {
                    prefix.push(t);
                    recurse(prefix, s, depth - 1, best);
                    prefix.pop();
                }
            }
        }
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        recurse(&mut Vec::new(), 0.0, max_len, &mut best);
        best
    }

    #[test]
    fn beam_three_matches_exhaustive_search() {
        let mut scorer = toy_lm;
        let (beam_tokens, beam_score) = beam_search(&mut scorer, 3, &rule(3));
        let (oracle_tokens, oracle_score) = exhaustive_argmax(3);
        assert_eq!(beam_tokens, oracle_tokens);
        assert!((beam_score - oracle_score).abs() < 1e-12);
        // the toy table is built so greedy takes the locally-best branch
        // and misses the global argmax
        let (greedy_tokens, greedy_score) = greedy_decode(&mut scorer, &rule(3));
        assert_ne!(greedy_tokens, oracle_tokens);
        assert!(greedy_score < oracle_score);
    }

    #[test]
    fn beam_one_equals_greedy_on_random_models() {
        use crate::rng::Rng;
        let mut rng = Rng::new(31);
        for _ in 0..20 {
            let v = 3 + rng.below(6);
            let seed: Vec<f64> = (0..v * 64).map(|_| rng.normal()).collect();
            let scorer = move |prefix: &[u32]| -> Vec<f64> {
                // deterministic pseudo-LM keyed on the prefix
                let mut key = 0usize;
                for (i, &t) in prefix.iter().enumerate() {
                    key = (key * 31 + t as usize + i) % 64;
                }
                let logits = &seed[key * v..(key + 1) * v];
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|x| (x - mx).exp()).sum();
                logits.iter().map(|x| x - mx - z.ln()).collect()
            };
            let r = DecodeRule {
                eos: 0,
                banned: vec![],
                max_len: 8,
            };
            let mut s1 = scorer.clone();
            let mut s2 = scorer;
            let (g_tokens, g_score) = greedy_decode(&mut s1, &r);
            let (b_tokens, b_score) = beam_search(&mut s2, 1, &r);
            assert_eq!(g_tokens, b_tokens);
            assert!((g_score - b_score).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_scores_emit_lowest_content_token_to_cap() {
        // all logits equal: the end token loses ties, the lowest allowed
        // content token repeats until the cap
        let mut scorer = |_: &[u32]| vec![0.25f64.ln(); 8];
        let r = DecodeRule {
            eos: 3,
            banned: vec![0, 1, 2],
            max_len: 5,
        };
        let (tokens, _) = greedy_decode(&mut scorer, &r);
        assert_eq!(tokens, vec![4, 4, 4, 4, 4]);
    }

    #[test]
    fn immediate_eos_gives_empty_output() {
        let mut scorer = |_: &[u32]| vec![-5.0, -4.0, -0.1, -6.0];
        let r = DecodeRule {
            eos: 2,
            banned: vec![0],
            max_len: 5,
        };
        let (tokens, score) = greedy_decode(&mut scorer, &r);
        assert!(tokens.is_empty());
        assert!((score + 0.1).abs() < 1e-12);
    }

    #[test]
    fn beam_never_scores_below_greedy_here() {
        let mut s1 = toy_lm;
        let mut s2 = toy_lm;
        let (_, g) = greedy_decode(&mut s1, &rule(3));
        let (_, b) = beam_search(&mut s2, 3, &rule(3));
        assert!(b >= g);
    }
}
