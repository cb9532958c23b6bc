//! Padding masks and the pairwise attention permissions derived from them.

use crate::util::ceil_div;

/// Per-position validity flags for one sequence. `true` means the position
/// holds a real token; `false` means padding. At least one position is
/// always valid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PadMask {
    valid: Vec<bool>,
}

impl PadMask {
    pub fn from_flags(valid: Vec<bool>) -> Self {
        assert!(!valid.is_empty(), "empty pad mask");
        assert!(
            valid.iter().any(|&v| v),
            "pad mask with no valid positions"
        );
        PadMask { valid }
    }

    /// First `valid_len` positions valid, the rest padding.
    pub fn from_len(valid_len: usize, total: usize) -> Self {
        assert!(valid_len >= 1 && valid_len <= total);
        PadMask::from_flags((0..total).map(|i| i < valid_len).collect())
    }

    pub fn all_valid(n: usize) -> Self {
        PadMask::from_flags(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    pub fn flags(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Number of leading valid positions (the true length under right-padding).
    pub fn prefix_len(&self) -> usize {
        self.valid.iter().take_while(|&&v| v).count()
    }

    /// Mask after one stride-2, k=3 pooling step: an output position is valid
    /// iff any input inside its window is valid, with out-of-range edge
    /// positions counting as padding. This is exactly a max-pool over the
    /// validity indicator.
    pub fn propagate(&self) -> PadMask {
        let n = self.len();
        let m = ceil_div(n, 2);
        let mut out = vec![false; m];
        for (j, slot) in out.iter_mut().enumerate() {
            for r in 0..3usize {
                let t = (2 * j + r) as isize - 1;
                if t >= 0 && (t as usize) < n && self.valid[t as usize] {
                    *slot = true;
                    break;
                }
            }
        }
        assert!(
            out.iter().any(|&v| v),
            "pad propagation produced an all-pad mask (whole sequence vanished)"
        );
        PadMask { valid: out }
    }
}

/// Pairwise attention permissions: `allow[q * n_keys + k]` says whether query
/// row `q` may attend key `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnMask {
    n_queries: usize,
    n_keys: usize,
    allow: Vec<bool>,
}

impl AttnMask {
    pub fn from_fn(n_queries: usize, n_keys: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allow = vec![false; n_queries * n_keys];
        for q in 0..n_queries {
            for k in 0..n_keys {
                allow[q * n_keys + k] = f(q, k);
            }
        }
        AttnMask {
            n_queries,
            n_keys,
            allow,
        }
    }

    pub fn full(n_queries: usize, n_keys: usize) -> Self {
        AttnMask {
            n_queries,
            n_keys,
            allow: vec![true; n_queries * n_keys],
        }
    }

    /// Every query row may attend exactly the valid key positions.
    pub fn keys_valid(n_queries: usize, keys: &PadMask) -> Self {
        AttnMask::from_fn(n_queries, keys.len(), |_, k| keys.is_valid(k))
    }

    /// Self-attention over one sequence, restricted to valid positions.
    pub fn self_attn(mask: &PadMask) -> Self {
        AttnMask::keys_valid(mask.len(), mask)
    }

    /// Causal self-attention: row `t` sees valid keys at positions `<= t`.
    /// Position 0 must be valid (sequences start with a real token).
    pub fn causal(keys: &PadMask) -> Self {
        assert!(keys.is_valid(0), "causal mask needs a valid first position");
        AttnMask::from_fn(keys.len(), keys.len(), |q, k| k <= q && keys.is_valid(k))
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn n_keys(&self) -> usize {
        self.n_keys
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allow[q * self.n_keys + k]
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.allow[q * self.n_keys..(q + 1) * self.n_keys]
    }

    /// Permute key order; used to check permutation equivariance.
    pub fn permute_keys(&self, perm: &[usize]) -> AttnMask {
        assert_eq!(perm.len(), self.n_keys);
        AttnMask::from_fn(self.n_queries, self.n_keys, |q, k| self.allowed(q, perm[k]))
    }
}
