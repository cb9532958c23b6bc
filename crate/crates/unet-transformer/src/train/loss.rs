//! Batch loss assembly: token-mean masked cross-entropy.

use crate::data::Batch;
use crate::mask::PadMask;
use crate::model::Seq2SeqModel;
use crate::nn::blocks::DropoutCtx;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

/// Mean negative log-likelihood over every non-pad target token in the
/// batch, as a tape variable, plus the token count. Because the mean is
/// `total / count`, it is invariant to how much right-padding the batch
/// carries and to how examples are grouped into batches.
pub fn batch_loss<F: Scalar>(
    model: &Seq2SeqModel<F>,
    tape: &mut Tape<F>,
    batch: &Batch,
    dctx: &mut DropoutCtx,
) -> (Var, usize) {
    let mut total: Option<Var> = None;
    let mut count = 0usize;
    for i in 0..batch.len() {
        let (nll, n) = model.example_loss(
            tape,
            &batch.src[i],
            &batch.segments[i],
            &batch.src_masks[i],
            &batch.tgt[i],
            &batch.tgt_masks[i],
            dctx,
        );
        count += n;
        total = Some(match total {
            Some(acc) => tape.add(acc, nll),
            None => nll,
        });
    }
    let total = total.expect("batch_loss over an empty batch");
    let mean = tape.scale(total, 1.0 / count as f64);
    (mean, count)
}

/// Loss for one unpadded example; convenience for tests and decoding checks.
pub fn example_ce<F: Scalar>(model: &Seq2SeqModel<F>, ex: &crate::data::Example) -> f64 {
    let mut tape = Tape::for_inference();
    let src_mask = PadMask::all_valid(ex.src.len());
    let tgt_mask = PadMask::all_valid(ex.tgt.len());
    let (nll, n) = model.example_loss(
        &mut tape,
        &ex.src,
        &ex.segments,
        &src_mask,
        &ex.tgt,
        &tgt_mask,
        &mut DropoutCtx::off(),
    );
    tape.value(nll).item().to_f64() / n as f64
}
