//! GRU cell for the recurrent sequence-to-sequence baseline.

use crate::nn::init::{init_parameter, InitSpec};
use crate::nn::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Gated recurrent unit with the convention
/// `h' = (1 - z) * h + z * h~`, where `z` is the update gate, `r` the reset
/// gate, and `h~ = tanh(W_h x + U_h (r * h) + b_h)` the candidate state.
pub struct GruCell {
    pub d_in: usize,
    pub d_hidden: usize,
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wh: ParamId,
    uh: ParamId,
    bh: ParamId,
}

impl GruCell {
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        let w = |ps: &mut ParamStore<F>, name: &str, shape: [usize; 2], rng: &mut Rng| {
            ps.add(
                format!("{prefix}.{name}"),
                init_parameter(InitSpec::xavier(), &shape, rng),
            )
        };
        GruCell {
            d_in,
            d_hidden,
            wz: w(ps, "wz", [d_in, d_hidden], rng),
            uz: w(ps, "uz", [d_hidden, d_hidden], rng),
            bz: ps.add(format!("{prefix}.bz"), Tensor::zeros(vec![d_hidden])),
            wr: w(ps, "wr", [d_in, d_hidden], rng),
            ur: w(ps, "ur", [d_hidden, d_hidden], rng),
            br: ps.add(format!("{prefix}.br"), Tensor::zeros(vec![d_hidden])),
            wh: w(ps, "wh", [d_in, d_hidden], rng),
            uh: w(ps, "uh", [d_hidden, d_hidden], rng),
            bh: ps.add(format!("{prefix}.bh"), Tensor::zeros(vec![d_hidden])),
        }
    }

    /// One recurrence step over a `[1, d_in]` input and `[1, d_hidden]` state.
    pub fn step<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        tape: &mut Tape<F>,
        x: Var,
        h: Var,
    ) -> Var {
        let gate = |tape: &mut Tape<F>, w, u, b, x, h| {
            let w = tape.param(ps, w);
            let u = tape.param(ps, u);
            let b = tape.param(ps, b);
            let xw = tape.matmul(x, w);
            let hu = tape.matmul(h, u);
            let s = tape.add(xw, hu);
            tape.add_bias(s, b)
        };
        let z_pre = gate(tape, self.wz, self.uz, self.bz, x, h);
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, self.wr, self.ur, self.br, x, h);
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h);
        let cand_pre = gate(tape, self.wh, self.uh, self.bh, x, rh);
        let cand = tape.tanh(cand_pre);
        let ones = tape.constant(Tensor::full(vec![1, self.d_hidden], F::ONE));
        let keep = tape.sub(ones, z);
        let kept = tape.mul(keep, h);
        let new = tape.mul(z, cand);
        tape.add(kept, new)
    }
}
