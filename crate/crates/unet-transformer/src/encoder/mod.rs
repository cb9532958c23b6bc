//! The hourglass encoder: down layers shrink the sequence while widening the
//! representation, up layers restore the resolution, and additive skip
//! connections pair levels of matching length and width. The same stack type
//! also hosts the flat ablation variants, which keep the mirror skip wiring
//! without the resampling.

pub mod layers;
pub mod schedule;

pub use layers::{DownLayer, FlatLayer, UpLayer};
pub use schedule::{
    build_flat_schedule, build_schedule, LayerCost, LayerRole, LayerSchedule, LayerSpec,
};

use crate::mask::PadMask;
use crate::nn::blocks::DropoutCtx;
use crate::nn::params::ParamStore;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

enum EncLayer {
    Down(DownLayer),
    Up(UpLayer),
    Flat(FlatLayer),
}

/// Encoder stack with optional mirror skip wiring. Layer `p` (1-based) in the
/// second half receives the output of level `2h - p`, where `h` is the half
/// point and level 0 is the embedded input: for six layers that pairs the
/// embeddings with the last layer and the two early outputs with their
/// mirror images.
pub struct EncoderStack {
    pub schedule: LayerSchedule,
    pub heads: usize,
    layers: Vec<EncLayer>,
    skip_half: Option<usize>,
}

/// Every level produced by one encoder pass: `levels[0]` is the embedded
/// input, `levels[k]` the output of layer `k`, each with the pad mask at its
/// own length. The last level is the encoder output.
pub struct EncodedLevels {
    pub levels: Vec<(Var, PadMask)>,
}

impl EncodedLevels {
    pub fn output(&self) -> Var {
        self.levels.last().unwrap().0
    }

    pub fn output_mask(&self) -> &PadMask {
        &self.levels.last().unwrap().1
    }

    /// Output of layer `i` (1-based).
    pub fn layer(&self, i: usize) -> (&Var, &PadMask) {
        let (v, m) = &self.levels[i];
        (v, m)
    }
}

impl EncoderStack {
    /// Full hourglass: `n_down` down layers then `n_down` up layers with
    /// mirror skips.
    pub fn build_unet<F: Scalar>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        d_base: usize,
        n_down: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(n_down >= 1, "hourglass needs at least one down layer");
        let schedule = build_schedule(d_base, n_down);
        let layers = schedule
            .layers
            .iter()
            .enumerate()
            .map(|(idx, spec)| match spec.role {
                LayerRole::Down => {
                    EncLayer::Down(DownLayer::new(ps, &layer_name(prefix, idx), *spec, heads, rng))
                }
                LayerRole::Up => {
                    EncLayer::Up(UpLayer::new(ps, &layer_name(prefix, idx), *spec, heads, rng))
                }
                LayerRole::Flat => unreachable!("hourglass schedule has no flat layers"),
            })
            .collect();
        EncoderStack {
            schedule,
            heads,
            layers,
            skip_half: Some(n_down),
        }
    }

    /// Length-preserving stack; `with_conv` keeps the k=3 entry convolution,
    /// `with_skips` keeps the mirror skip wiring.
    pub fn build_flat<F: Scalar>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        d_base: usize,
        n_layers: usize,
        heads: usize,
        with_conv: bool,
        with_skips: bool,
        rng: &mut Rng,
    ) -> Self {
        assert!(
            !with_skips || n_layers % 2 == 0,
            "mirror skips need an even layer count, got {n_layers}"
        );
        let schedule = build_flat_schedule(d_base, n_layers);
        let layers = schedule
            .layers
            .iter()
            .enumerate()
            .map(|(idx, spec)| {
                EncLayer::Flat(FlatLayer::new(
                    ps,
                    &layer_name(prefix, idx),
                    *spec,
                    heads,
                    with_conv,
                    rng,
                ))
            })
            .collect();
        EncoderStack {
            schedule,
            heads,
            layers,
            skip_half: with_skips.then_some(n_layers / 2),
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn has_conv(&self) -> bool {
        self.layers.iter().any(|l| match l {
            EncLayer::Flat(f) => f.has_conv(),
            _ => true,
        })
    }

    pub fn has_skips(&self) -> bool {
        self.skip_half.is_some()
    }

    /// Per-layer flag: does the layer transform its input on entry
    /// (convolution or deconvolution) before attending?
    pub fn layer_entry_transforms(&self) -> Vec<bool> {
        self.layers
            .iter()
            .map(|l| match l {
                EncLayer::Flat(f) => f.has_conv(),
                _ => true,
            })
            .collect()
    }

    /// Source level feeding layer `p` (1-based), if any.
    pub fn skip_source(&self, p: usize) -> Option<usize> {
        match self.skip_half {
            Some(h) if p > h => Some(2 * h - p),
            _ => None,
        }
    }

    /// Runs the stack. `emb` must be the summed embeddings at the base width;
    /// its padding rows are pinned to zero here, and every layer re-zeroes
    /// its own padding rows, so pad content can never leak into real tokens.
    pub fn forward<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        tape: &mut Tape<F>,
        emb: Var,
        mask: &PadMask,
        dctx: &mut DropoutCtx,
    ) -> EncodedLevels {
        assert_eq!(
            tape.value(emb).shape(),
            &[mask.len(), self.schedule.d_base],
            "encoder input {:?} does not match mask length {} and width {}",
            tape.value(emb).shape(),
            mask.len(),
            self.schedule.d_base
        );
        let emb = tape.zero_rows(emb, mask.flags());
        let mut levels: Vec<(Var, PadMask)> = vec![(emb, mask.clone())];
        for (idx, layer) in self.layers.iter().enumerate() {
            let p = idx + 1;
            let (cur, cur_mask) = levels.last().unwrap().clone();
            let skip = self.skip_source(p).map(|lvl| levels[lvl].clone());
            let next = match layer {
                EncLayer::Down(d) => d.forward(ps, tape, cur, &cur_mask, dctx),
                EncLayer::Up(u) => {
                    let (skip_var, skip_mask) =
                        skip.expect("up layers always have a skip source");
                    let y = u.forward(ps, tape, cur, skip_var, &skip_mask, dctx);
                    (y, skip_mask)
                }
                EncLayer::Flat(f) => {
                    let y = f.forward(ps, tape, cur, skip.map(|(v, _)| v), &cur_mask, dctx);
                    (y, cur_mask)
                }
            };
            levels.push(next);
        }
        EncodedLevels { levels }
    }
}

fn layer_name(prefix: &str, idx: usize) -> String {
    format!("{prefix}.layer{}", idx + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn random_emb(n: usize, d: usize, rng: &mut Rng) -> Tensor<f64> {
        let data: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        Tensor::new(vec![n, d], data)
    }

    fn run_encoder(
        stack: &EncoderStack,
        ps: &ParamStore<f64>,
        emb: Tensor<f64>,
        mask: &PadMask,
    ) -> (Vec<Vec<usize>>, Tensor<f64>) {
        let mut tape = Tape::for_inference();
        let e = tape.constant(emb);
        let out = stack.forward(ps, &mut tape, e, mask, &mut DropoutCtx::off());
        let shapes = out
            .levels
            .iter()
            .map(|(v, _)| tape.value(*v).shape().to_vec())
            .collect();
        (shapes, tape.value(out.output()).clone())
    }

    #[test]
    fn output_matches_input_length_and_base_width() {
        let mut rng = Rng::new(1);
        let mut ps: ParamStore<f64> = ParamStore::new();
        let stack = EncoderStack::build_unet(&mut ps, "enc", 16, 3, 2, &mut rng);
        for n in [1usize, 2, 7, 16, 33] {
            let emb = random_emb(n, 16, &mut rng);
            let (shapes, out) = run_encoder(&stack, &ps, emb, &PadMask::all_valid(n));
            assert_eq!(shapes.last().unwrap(), &vec![n, 16], "n = {n}");
            assert!(out.all_finite());
        }
    }

    #[test]
    fn internal_lengths_mirror_for_eight_tokens() {
        let mut rng = Rng::new(2);
        let mut ps: ParamStore<f64> = ParamStore::new();
        let stack = EncoderStack::build_unet(&mut ps, "enc", 8, 3, 2, &mut rng);
        let emb = random_emb(8, 8, &mut rng);
        let (shapes, _) = run_encoder(&stack, &ps, emb, &PadMask::all_valid(8));
        let lengths: Vec<usize> = shapes.iter().map(|s| s[0]).collect();
        assert_eq!(lengths, vec![8, 4, 2, 1, 2, 4, 8]);
    }

    #[test]
    fn pad_content_cannot_reach_valid_outputs() {
        let mut rng = Rng::new(3);
        let mut ps: ParamStore<f64> = ParamStore::new();
        let stack = EncoderStack::build_unet(&mut ps, "enc", 8, 3, 2, &mut rng);
        let n = 9;
        let valid = 5;
        let mask = PadMask::from_len(valid, n);
        let base = random_emb(n, 8, &mut rng);
        let mut poked = base.clone();
        for r in valid..n {
            for c in 0..8 {
                poked.data_mut()[r * 8 + c] = rng.normal() * 100.0;
            }
        }
        let (_, out_a) = run_encoder(&stack, &ps, base, &mask);
        let (_, out_b) = run_encoder(&stack, &ps, poked, &mask);
        for r in 0..valid {
            for c in 0..8 {
                assert_eq!(
                    out_a.data()[r * 8 + c].to_bits(),
                    out_b.data()[r * 8 + c].to_bits(),
                    "valid output changed at ({r},{c})"
                );
            }
        }
        for r in valid..n {
            for c in 0..8 {
                assert_eq!(out_a.data()[r * 8 + c], 0.0, "pad row not zeroed");
            }
        }
    }

    #[test]
    fn skip_wiring_is_mirrored() {
        let mut rng = Rng::new(4);
        let mut ps: ParamStore<f64> = ParamStore::new();
        let stack = EncoderStack::build_unet(&mut ps, "enc", 8, 3, 2, &mut rng);
        assert_eq!(stack.skip_source(4), Some(2));
        assert_eq!(stack.skip_source(5), Some(1));
        assert_eq!(stack.skip_source(6), Some(0));
        assert_eq!(stack.skip_source(3), None);
    }

    #[test]
    fn flat_stack_preserves_shape_everywhere() {
        let mut rng = Rng::new(5);
        let mut ps: ParamStore<f64> = ParamStore::new();
        let stack = EncoderStack::build_flat(&mut ps, "enc", 8, 6, 2, true, true, &mut rng);
        let emb = random_emb(7, 8, &mut rng);
        let (shapes, _) = run_encoder(&stack, &ps, emb, &PadMask::from_len(5, 7));
        for s in shapes {
            assert_eq!(s, vec![7, 8]);
        }
    }

    #[test]
    fn whole_encoder_passes_gradient_check() {
        let mut rng = Rng::new(6);
        let mut ps: ParamStore<f64> = ParamStore::new();
        let stack = EncoderStack::build_unet(&mut ps, "enc", 4, 2, 2, &mut rng);
        let n = 5;
        let emb = random_emb(n, 4, &mut rng);
        ps.add("input.emb", emb);
        let wdata: Vec<f64> = (0..n * 4).map(|_| rng.normal()).collect();
        let weights = Tensor::new(vec![n, 4], wdata);
        let mask = PadMask::from_len(4, n);
        let run = move |ps: &ParamStore<f64>, tape: &mut Tape<f64>| {
            let emb = tape.param(ps, ps.id_of("input.emb").unwrap());
            let out = stack.forward(ps, tape, emb, &mask, &mut DropoutCtx::off());
            let w = tape.constant(weights.clone());
            let prod = tape.mul(out.output(), w);
            tape.sum(prod)
        };
        // Composite networks need a wider probe: at 1e-5 the central
        // difference is dominated by cancellation noise, not curvature.
        let report = crate::tensor::grad_check(&ps, &run, 1e-4, crate::tensor::DEFAULT_TOL);
        assert!(
            report.pass(),
            "worst {}: {:?}",
            report.max_rel_err,
            report
                .per_param
                .iter()
                .filter(|(_, e)| *e > report.tol)
                .collect::<Vec<_>>()
        );
    }
}

