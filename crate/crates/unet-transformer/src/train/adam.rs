//! Adam with bias correction, the inverse-square-root warmup schedule, and
//! global-norm gradient clipping.

use crate::nn::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::TrainError;

/// `d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`: linear warmup to the
/// peak at `step = warmup`, inverse square root decay afterwards.
pub fn noam_lr(step: u64, d_model: usize, warmup: u64) -> f64 {
    assert!(step >= 1 && warmup >= 1);
    let s = step as f64;
    let w = warmup as f64;
    (d_model as f64).powf(-0.5) * f64::min(s.powf(-0.5), s * w.powf(-1.5))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    Noam { warmup: u64 },
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64, d_model: usize) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::Noam { warmup } => noam_lr(step, d_model, warmup),
        }
    }
}

/// Adam state: first/second moments per parameter plus the shared step count.
pub struct Adam<F: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &ParamStore<F>, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step_count: 0,
            m: params
                .ids()
                .map(|id| Tensor::zeros(params.value(id).shape().to_vec()))
                .collect(),
            v: params
                .ids()
                .map(|id| Tensor::zeros(params.value(id).shape().to_vec()))
                .collect(),
        }
    }

    /// One bias-corrected update over every parameter, in registration order.
    /// A non-finite gradient aborts the step before anything mutates.
    pub fn step(
        &mut self,
        params: &mut ParamStore<F>,
        grads: &[Tensor<F>],
        lr: f64,
    ) -> Result<(), TrainError> {
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        for (id, grad) in params.ids().zip(grads) {
            if !grad.all_finite() {
                return Err(TrainError::NonFiniteGrad {
                    param: params.name(id).to_string(),
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count;
        let b1 = F::of(self.beta1);
        let b2 = F::of(self.beta2);
        let one_m_b1 = F::of(1.0 - self.beta1);
        let one_m_b2 = F::of(1.0 - self.beta2);
        let corr1 = F::of(1.0 / (1.0 - self.beta1.powi(t as i32)));
        let corr2 = F::of(1.0 / (1.0 - self.beta2.powi(t as i32)));
        let lr = F::of(lr);
        let eps = F::of(self.eps);
        for ((id, grad), (m, v)) in params
            .ids()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let p = params.value_mut(id).data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (i, &g) in grad.data().iter().enumerate() {
                md[i] = b1 * md[i] + one_m_b1 * g;
                vd[i] = b2 * vd[i] + one_m_b2 * g * g;
                let m_hat = md[i] * corr1;
                let v_hat = vd[i] * corr2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn moments(&self) -> (&[Tensor<F>], &[Tensor<F>]) {
        (&self.m, &self.v)
    }

    pub fn restore_moments(&mut self, m: Vec<Tensor<F>>, v: Vec<Tensor<F>>, step_count: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.m = m;
        self.v = v;
        self.step_count = step_count;
    }
}

/// L2 norm over all gradients together.
pub fn global_grad_norm<F: Scalar>(grads: &[Tensor<F>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| {
            let x = v.to_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Scales gradients in place so the global norm is at most `max_norm`.
pub fn clip_grads<F: Scalar>(grads: &mut [Tensor<F>], max_norm: f64) -> f64 {
    let norm = global_grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = F::of(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noam_values() {
        let peak = noam_lr(4000, 256, 4000);
        assert!((peak - 9.8821176880261854e-4).abs() < 1e-12, "{peak}");
        // linear in the warmup region
        assert!((noam_lr(1, 256, 4000) / noam_lr(2, 256, 4000) - 0.5).abs() < 1e-12);
        // maximal at the warmup boundary
        assert!(noam_lr(3999, 256, 4000) < peak);
        assert!(noam_lr(4001, 256, 4000) < peak);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // With g = 0.5 everywhere, the bias-corrected first step moves by
        // almost exactly -lr.
        let mut ps: ParamStore<f64> = ParamStore::new();
        ps.add("w", Tensor::scalar(1.0));
        let mut adam = Adam::new(&ps, 0.9, 0.999, 1e-8);
        adam.step(&mut ps, &[Tensor::scalar(0.5)], 1e-4).unwrap();
        let delta = ps.value(ps.id_of("w").unwrap()).item() - 1.0;
        assert!((delta + 1e-4).abs() < 1e-9, "delta {delta}");
    }

    #[test]
    fn zero_gradient_with_zero_state_moves_nothing() {
        let mut ps: ParamStore<f64> = ParamStore::new();
        ps.add("w", Tensor::vector(&[2.0, -3.0]));
        let mut adam = Adam::new(&ps, 0.9, 0.999, 1e-8);
        adam.step(&mut ps, &[Tensor::zeros(vec![2])], 1e-2).unwrap();
        assert_eq!(
            ps.value(ps.id_of("w").unwrap()).to_f64_vec(),
            vec![2.0, -3.0]
        );
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let mut ps: ParamStore<f64> = ParamStore::new();
        ps.add("layer.w", Tensor::scalar(1.0));
        let mut adam = Adam::new(&ps, 0.9, 0.999, 1e-8);
        let err = adam
            .step(&mut ps, &[Tensor::scalar(f64::NAN)], 1e-4)
            .unwrap_err();
        assert!(err.to_string().contains("layer.w"), "{err}");
        // nothing moved, no step counted
        assert_eq!(ps.value(ps.id_of("layer.w").unwrap()).item(), 1.0);
        assert_eq!(adam.step_count, 0);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut grads = vec![Tensor::<f64>::vector(&[3.0, 0.0]), Tensor::vector(&[0.0, 4.0])];
        let norm = clip_grads(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((global_grad_norm(&grads) - 1.0).abs() < 1e-12);
        // already-small gradients untouched
        let mut small = vec![Tensor::<f64>::vector(&[0.3])];
        clip_grads(&mut small, 1.0);
        assert_eq!(small[0].to_f64_vec(), vec![0.3]);
    }
}
