//! Feed-forward and layer-norm blocks, plus the dropout context threaded
//! through forward passes.

use crate::nn::init::{init_parameter, InitSpec};
use crate::nn::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Where and how strongly dropout applies during a forward pass.
///
/// One shared rate covers both attention weights and sub-layer outputs; each
/// site can be switched off independently. Evaluation passes use
/// [`DropoutCtx::off`].
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub on_attn: bool,
    pub on_sublayer: bool,
    pub rng: Option<&'a mut Rng>,
}

impl<'a> DropoutCtx<'a> {
    pub fn off() -> DropoutCtx<'static> {
        DropoutCtx {
            rate: 0.0,
            on_attn: false,
            on_sublayer: false,
            rng: None,
        }
    }

    pub fn new(rate: f64, on_attn: bool, on_sublayer: bool, rng: &'a mut Rng) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate {rate} out of [0,1)");
        DropoutCtx {
            rate,
            on_attn,
            on_sublayer,
            rng: Some(rng),
        }
    }

    fn apply<F: Scalar>(&mut self, tape: &mut Tape<F>, x: Var, enabled: bool) -> Var {
        if self.rate <= 0.0 || !enabled {
            return x;
        }
        match self.rng.as_deref_mut() {
            Some(rng) => tape.dropout(x, 1.0 - self.rate, rng),
            None => x,
        }
    }

    pub fn attn_weights<F: Scalar>(&mut self, tape: &mut Tape<F>, x: Var) -> Var {
        let enabled = self.on_attn;
        self.apply(tape, x, enabled)
    }

    pub fn sublayer<F: Scalar>(&mut self, tape: &mut Tape<F>, x: Var) -> Var {
        let enabled = self.on_sublayer;
        self.apply(tape, x, enabled)
    }
}

/// Position-wise feed-forward: linear(d -> d_inner), ReLU, linear(d_inner -> d).
/// The caller wraps it with residual add + layer norm (post-norm).
pub struct FeedForward {
    pub d: usize,
    pub d_inner: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl FeedForward {
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        d: usize,
        d_inner: usize,
        rng: &mut Rng,
    ) -> Self {
        FeedForward {
            d,
            d_inner,
            w1: ps.add(
                format!("{prefix}.w1"),
                init_parameter(InitSpec::kaiming(), &[d, d_inner], rng),
            ),
            b1: ps.add(format!("{prefix}.b1"), Tensor::zeros(vec![d_inner])),
            w2: ps.add(
                format!("{prefix}.w2"),
                init_parameter(InitSpec::xavier_scaled(), &[d_inner, d], rng),
            ),
            b2: ps.add(format!("{prefix}.b2"), Tensor::zeros(vec![d])),
        }
    }

    pub fn forward<F: Scalar>(&self, ps: &ParamStore<F>, tape: &mut Tape<F>, x: Var) -> Var {
        let w1 = tape.param(ps, self.w1);
        let b1 = tape.param(ps, self.b1);
        let w2 = tape.param(ps, self.w2);
        let b2 = tape.param(ps, self.b2);
        let h = tape.matmul(x, w1);
        let h = tape.add_bias(h, b1);
        let h = tape.relu(h);
        let y = tape.matmul(h, w2);
        tape.add_bias(y, b2)
    }
}

/// Learned gain/bias layer normalization over the feature axis.
pub struct LayerNormBlock {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNormBlock {
    pub fn new<F: Scalar>(ps: &mut ParamStore<F>, prefix: &str, d: usize) -> Self {
        LayerNormBlock {
            gain: ps.add(format!("{prefix}.gain"), Tensor::full(vec![d], F::ONE)),
            bias: ps.add(format!("{prefix}.bias"), Tensor::zeros(vec![d])),
        }
    }

    pub fn forward<F: Scalar>(&self, ps: &ParamStore<F>, tape: &mut Tape<F>, x: Var) -> Var {
        let gain = tape.param(ps, self.gain);
        let bias = tape.param(ps, self.bias);
        tape.layer_norm(x, gain, bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeroed_feed_forward_is_zero() {
        let mut rng = Rng::new(0);
        let mut ps: ParamStore<f64> = ParamStore::new();
        let ff = FeedForward::new(&mut ps, "ff", 4, 8, &mut rng);
        for id in ps.ids() {
            let shape = ps.value(id).shape().to_vec();
            ps.set(id, Tensor::zeros(shape));
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![3, 4], 1.5));
        let y = ff.forward(&ps, &mut tape, x);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inner_width_follows_base_ratio() {
        let (d_inner, _, _) = crate::nn::init::scaled_sizes(256);
        assert_eq!(d_inner, 1024);
    }
}
