//! Weight initialization and proportional size scaling.

use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::round_half_up;

/// Initialization scheme for a weight tensor.
///
/// Xavier everywhere, except: the pre-ReLU linear of the feed-forward block
/// uses Kaiming, and the output projections of attention and feed-forward use
/// Xavier damped by a 1/100 gain. The damped outputs make a fresh post-norm
/// layer behave nearly as the identity, which keeps early training stable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitSpec {
    Xavier { gain: f64 },
    Kaiming,
}

impl InitSpec {
    pub fn xavier() -> Self {
        InitSpec::Xavier { gain: 1.0 }
    }

    pub fn kaiming() -> Self {
        InitSpec::Kaiming
    }

    /// Xavier scaled by the 1/100 gain used on output projections.
    pub fn xavier_scaled() -> Self {
        InitSpec::Xavier { gain: 0.01 }
    }

    /// Standard deviation implied by the scheme for the given fan pair.
    pub fn std(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitSpec::Xavier { gain } => {
                assert!(gain > 0.0, "xavier gain must be positive, got {gain}");
                gain * (2.0 / (fan_in + fan_out) as f64).sqrt()
            }
            InitSpec::Kaiming => (2.0 / fan_in as f64).sqrt(),
        }
    }
}

/// Fan pair of a weight shape: `[in, out]` for matrices, `[k, in, out]`
/// kernels count the kernel taps into both fans.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [fan_in, fan_out] => (*fan_in, *fan_out),
        [k, d_in, d_out] => (k * d_in, k * d_out),
        _ => panic!("no fan convention for weight shape {shape:?}"),
    }
}

/// Draws a weight tensor with the scheme's standard deviation. Biases are not
/// drawn here; they start at zero via [`Tensor::zeros`].
pub fn init_parameter<F: Scalar>(spec: InitSpec, shape: &[usize], rng: &mut Rng) -> Tensor<F> {
    let (fan_in, fan_out) = fans(shape);
    let std = spec.std(fan_in, fan_out);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::of(rng.normal() * std)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Proportionally scales the inner feed-forward width and the per-head
/// key/value widths from the base configuration (1024 and 64 at width 256),
/// rounding half-up. The head count never scales.
pub fn scaled_sizes(d: usize) -> (usize, usize, usize) {
    assert!(d >= 1);
    let d_inner = round_half_up(1024.0 * d as f64 / 256.0);
    let d_key = round_half_up(64.0 * d as f64 / 256.0);
    (d_inner, d_key, d_key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_stds() {
        assert!((InitSpec::xavier().std(256, 256) - 0.0625).abs() < 1e-12);
        assert!((InitSpec::kaiming().std(256, 0) - 0.08838834764831845).abs() < 1e-12);
        assert!((InitSpec::xavier_scaled().std(256, 256) - 6.25e-4).abs() < 1e-12);
    }

    #[test]
    fn empirical_std_matches_formula() {
        let mut rng = Rng::new(1234);
        for (spec, expect) in [
            (InitSpec::xavier(), 0.0625),
            (InitSpec::kaiming(), (2.0f64 / 1000.0).sqrt()),
            (InitSpec::xavier_scaled(), 6.25e-4),
        ] {
            let shape = match spec {
                InitSpec::Kaiming => vec![1000, 1000],
                _ => vec![256, 256],
            };
            let n: usize = shape.iter().product();
            let rounds = 1_000_000usize.div_ceil(n);
            let mut sum_sq = 0.0f64;
            let mut count = 0usize;
            for _ in 0..rounds {
                let t: Tensor<f64> = init_parameter(spec, &shape, &mut rng);
                sum_sq += t.data().iter().map(|v| v * v).sum::<f64>();
                count += n;
            }
            let std = (sum_sq / count as f64).sqrt();
            assert!(
                (std - expect).abs() / expect < 0.05,
                "{spec:?}: {std} vs {expect}"
            );
        }
    }

    #[test]
    fn conv_kernel_fans() {
        assert_eq!(fans(&[3, 8, 16]), (24, 48));
    }

    #[test]
    fn proportional_sizes() {
        assert_eq!(scaled_sizes(256), (1024, 64, 64));
        assert_eq!(scaled_sizes(362), (1448, 91, 91));
        assert_eq!(scaled_sizes(512), (2048, 128, 128));
    }
}
