//! Length/width schedule for the hourglass stack.
//!
//! Down layer `i` (1-based) halves the token count and produces width
//! `round(d_base * sqrt(2)^(i-1))`; up layers mirror the widths back and the
//! final layer restores `d_base`. For the base width 256 and three down
//! layers this yields output widths [256, 362, 512, 362, 256, 256]. Growing
//! the width by sqrt(2) while halving the length keeps the `N*d^2` share of
//! the per-layer cost constant across levels.

use crate::nn::init::scaled_sizes;
use crate::util::{ceil_div, round_half_up};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerRole {
    Down,
    Up,
    Flat,
}

/// One layer of the schedule. `div_in`/`div_out` are the powers of two the
/// original length has been divided by (rounding up) at the layer's input and
/// output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub role: LayerRole,
    pub div_in: usize,
    pub div_out: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub d_inner: usize,
    pub d_key: usize,
    pub d_value: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSchedule {
    pub d_base: usize,
    pub n_down: usize,
    pub layers: Vec<LayerSpec>,
}

fn spec_for(role: LayerRole, div_in: usize, div_out: usize, d_in: usize, d_out: usize) -> LayerSpec {
    let (d_inner, d_key, d_value) = scaled_sizes(d_out);
    LayerSpec {
        role,
        div_in,
        div_out,
        d_in,
        d_out,
        d_inner,
        d_key,
        d_value,
    }
}

/// Hourglass schedule: `n_down` halving layers, then `n_down` doubling
/// layers. `n_down = 0` degenerates to six flat layers at the base width.
pub fn build_schedule(d_base: usize, n_down: usize) -> LayerSchedule {
    assert!(d_base >= 1);
    if n_down == 0 {
        return build_flat_schedule(d_base, 6);
    }
    let width = |i: usize| round_half_up(d_base as f64 * 2f64.sqrt().powi(i as i32));
    let mut layers = Vec::with_capacity(2 * n_down);
    for i in 1..=n_down {
        let d_in = if i == 1 { d_base } else { width(i - 2) };
        layers.push(spec_for(
            LayerRole::Down,
            1 << (i - 1),
            1 << i,
            d_in,
            width(i - 1),
        ));
    }
    for j in 1..=n_down {
        let d_in = if j == 1 { width(n_down - 1) } else { width(n_down - j) };
        let d_out = if j == n_down {
            d_base
        } else {
            width(n_down - j - 1)
        };
        layers.push(spec_for(
            LayerRole::Up,
            1 << (n_down - j + 1),
            1 << (n_down - j),
            d_in,
            d_out,
        ));
    }
    LayerSchedule {
        d_base,
        n_down,
        layers,
    }
}

/// Length-preserving schedule used by the ablation variants and the vanilla
/// Transformer.
pub fn build_flat_schedule(d_base: usize, n_layers: usize) -> LayerSchedule {
    assert!(d_base >= 1 && n_layers >= 1);
    LayerSchedule {
        d_base,
        n_down: 0,
        layers: (0..n_layers)
            .map(|_| spec_for(LayerRole::Flat, 1, 1, d_base, d_base))
            .collect(),
    }
}

impl LayerSchedule {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.d_out).collect()
    }

    /// Per-layer output lengths for an input of `n` tokens; halvings round up
    /// and up layers retrace the recorded down-path lengths exactly.
    pub fn lengths_for(&self, n: usize) -> Vec<usize> {
        assert!(n >= 1);
        let mut down_lens = vec![n];
        for _ in 0..self.n_down {
            down_lens.push(ceil_div(*down_lens.last().unwrap(), 2));
        }
        self.layers
            .iter()
            .map(|l| match l.role {
                LayerRole::Flat => n,
                LayerRole::Down => down_lens[l.div_out.trailing_zeros() as usize],
                LayerRole::Up => down_lens[l.div_out.trailing_zeros() as usize],
            })
            .collect()
    }

    /// Rough multiply counts for one forward pass at input length `n`,
    /// split into the width-dominated and length-dominated attention terms.
    pub fn op_estimate(&self, n: usize, heads: usize) -> Vec<LayerCost> {
        let lengths = self.lengths_for(n);
        let mut prev_len = n;
        let mut out = Vec::with_capacity(self.layers.len());
        for (spec, &len_out) in self.layers.iter().zip(&lengths) {
            let n_q = len_out;
            let n_kv = match spec.role {
                LayerRole::Down | LayerRole::Flat => prev_len,
                LayerRole::Up => len_out,
            };
            let hk = heads * spec.d_key;
            let hv = heads * spec.d_value;
            let conv = match spec.role {
                LayerRole::Down | LayerRole::Flat => 3 * prev_len * spec.d_in * spec.d_out,
                LayerRole::Up => 3 * prev_len * spec.d_in * spec.d_out,
            };
            let projections = n_q * spec.d_out * hk
                + n_kv * spec.d_in * (hk + hv)
                + n_q * hv * spec.d_out
                + 2 * n_q * spec.d_out * spec.d_inner;
            let scores = n_q * n_kv * (hk + hv);
            out.push(LayerCost {
                role: spec.role,
                n_tokens: n_q,
                d: spec.d_out,
                nd2_term: n_q * spec.d_out * spec.d_out,
                n2d_term: scores,
                total: conv + projections + scores,
            });
            prev_len = len_out;
        }
        out
    }
}

/// Per-layer cost estimate; `nd2_term` is the canonical `N * d^2` share.
#[derive(Clone, Copy, Debug)]
pub struct LayerCost {
    pub role: LayerRole,
    pub n_tokens: usize,
    pub d: usize,
    pub nd2_term: usize,
    pub n2d_term: usize,
    pub total: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_widths_at_base_256() {
        let s = build_schedule(256, 3);
        assert_eq!(s.widths(), vec![256, 362, 512, 362, 256, 256]);
        let d_in: Vec<usize> = s.layers.iter().map(|l| l.d_in).collect();
        assert_eq!(d_in, vec![256, 256, 362, 512, 362, 256]);
        let inner: Vec<usize> = s.layers.iter().map(|l| l.d_inner).collect();
        assert_eq!(inner, vec![1024, 1448, 2048, 1448, 1024, 1024]);
        let keys: Vec<usize> = s.layers.iter().map(|l| l.d_key).collect();
        assert_eq!(keys, vec![64, 91, 128, 91, 64, 64]);
    }

    #[test]
    fn zero_downs_is_flat_stack() {
        let s = build_schedule(256, 0);
        assert_eq!(s.n_layers(), 6);
        assert!(s.widths().iter().all(|&w| w == 256));
        assert!(s.layers.iter().all(|l| l.role == LayerRole::Flat));
    }

    #[test]
    fn half_width_base_follows_same_rule() {
        let s = build_schedule(128, 2);
        assert_eq!(s.widths(), vec![128, 181, 128, 128]);
    }

    #[test]
    fn lengths_150() {
        let s = build_schedule(256, 3);
        assert_eq!(s.lengths_for(150), vec![75, 38, 19, 38, 75, 150]);
        assert_eq!(s.lengths_for(8), vec![4, 2, 1, 2, 4, 8]);
        assert_eq!(s.lengths_for(1), vec![1, 1, 1, 1, 1, 1]);
        assert_eq!(s.lengths_for(7), vec![4, 2, 1, 2, 4, 7]);
    }

    #[test]
    fn nd2_term_stays_flat_across_down_levels() {
        let s = build_schedule(256, 3);
        let costs = s.op_estimate(150, 8);
        let downs: Vec<usize> = costs
            .iter()
            .filter(|c| c.role == LayerRole::Down)
            .map(|c| c.nd2_term)
            .collect();
        assert_eq!(downs.len(), 3);
        let max = *downs.iter().max().unwrap() as f64;
        let min = *downs.iter().min().unwrap() as f64;
        assert!(
            max / min < 1.05,
            "halving N against sqrt(2) width growth should hold Nd^2 nearly constant: {downs:?}"
        );
    }
}
