//! Central-difference gradient verification.
//!
//! Runs in 64-bit precision only; single precision does not leave enough
//! headroom between truncation and round-off error for a meaningful check.
//! The numeric side never touches the reverse sweep, so it stays an
//! independent oracle for the analytic gradients.

use crate::nn::params::ParamStore;
use crate::tensor::{Tape, Var};

/// Outcome of one gradient check: worst relative error per parameter.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<R>(params: &ParamStore<f64>, run: &R) -> f64
where
    R: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Var,
{
    let mut tape = Tape::for_inference();
    let loss = run(params, &mut tape);
    tape.value(loss).item()
}

/// Analytic gradients for every parameter in `params`, via one reverse sweep.
pub fn analytic_grads<R>(params: &ParamStore<f64>, run: &R) -> Vec<Vec<f64>>
where
    R: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Var,
{
    let mut tape = Tape::new();
    let loss = run(params, &mut tape);
    tape.backward(loss);
    params
        .ids()
        .map(|id| tape.param_grad(params, id).to_f64_vec())
        .collect()
}

/// Central-difference gradients `(f(x+eps) - f(x-eps)) / 2eps`, element-wise.
pub fn numeric_grads<R>(params: &ParamStore<f64>, run: &R, eps: f64) -> Vec<Vec<f64>>
where
    R: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Var,
{
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for id in params.ids() {
        let n = params.value(id).len();
        let mut grad = vec![0.0; n];
        for (i, slot) in grad.iter_mut().enumerate() {
            let original = work.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = original + eps;
            let plus = eval(&work, run);
            work.value_mut(id).data_mut()[i] = original - eps;
            let minus = eval(&work, run);
            work.value_mut(id).data_mut()[i] = original;
            *slot = (plus - minus) / (2.0 * eps);
        }
        out.push(grad);
    }
    out
}

/// Compares analytic and central-difference gradients of a scalar-valued
/// computation over every parameter in `params`. The runner must be
/// deterministic (no dropout).
pub fn grad_check<R>(
    params: &ParamStore<f64>,
    run: &R,
    eps: f64,
    tol: f64,
) -> GradCheckReport
where
    R: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Var,
{
    let analytic = analytic_grads(params, run);
    let numeric = numeric_grads(params, run, eps);
    let mut per_param = Vec::with_capacity(params.len());
    let mut max_rel_err: f64 = 0.0;
    for (idx, id) in params.ids().enumerate() {
        let worst = analytic[idx]
            .iter()
            .zip(&numeric[idx])
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0f64, f64::max);
        max_rel_err = max_rel_err.max(worst);
        per_param.push((params.name(id).to_string(), worst));
    }
    GradCheckReport {
        per_param,
        max_rel_err,
        tol,
    }
}

/// Default probe step for central differences.
pub const DEFAULT_EPS: f64 = 1e-5;
/// Default acceptance threshold on relative error.
pub const DEFAULT_TOL: f64 = 1e-4;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn square_at_three() {
        let mut ps: ParamStore<f64> = ParamStore::new();
        ps.add("x", Tensor::scalar(3.0));
        let run = |ps: &ParamStore<f64>, tape: &mut Tape<f64>| {
            let x = tape.param(ps, ps.id_of("x").unwrap());
            let sq = tape.mul(x, x);
            tape.sum(sq)
        };
        let a = analytic_grads(&ps, &run);
        let n = numeric_grads(&ps, &run, DEFAULT_EPS);
        assert!((a[0][0] - 6.0).abs() < 1e-12);
        assert!((n[0][0] - 6.0).abs() < 1e-6);
        let report = grad_check(&ps, &run, DEFAULT_EPS, DEFAULT_TOL);
        assert!(report.pass(), "{report:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        // Negative control: a sign-flipped analytic gradient must be caught.
        let mut ps: ParamStore<f64> = ParamStore::new();
        ps.add("x", Tensor::vector(&[1.5, -0.5]));
        let run = |ps: &ParamStore<f64>, tape: &mut Tape<f64>| {
            let x = tape.param(ps, ps.id_of("x").unwrap());
            let sq = tape.mul(x, x);
            tape.sum(sq)
        };
        let analytic = analytic_grads(&ps, &run);
        let numeric = numeric_grads(&ps, &run, DEFAULT_EPS);
        let worst_flipped = analytic[0]
            .iter()
            .zip(&numeric[0])
            .map(|(&a, &n)| relative_error(-a, n))
            .fold(0.0f64, f64::max);
        assert!(
            worst_flipped > DEFAULT_TOL,
            "sign flip went unnoticed: {worst_flipped}"
        );
    }
}
