//! Weight initialization.
//!
//! Convolutions draw from a He-normal distribution, std = sqrt(2 / fan_in)
//! with fan_in = in_channels * kernel_h * kernel_w; biases start at zero.
//! Weights are filled in logical element order from the caller's RNG, so a
//! model built in a fixed construction order is reproducible from one seed.

use rand::Rng;

use crate::nn::{Conv2d, Padding};
use crate::Scalar;

#[allow(clippy::too_many_arguments)]
pub fn he_conv<F: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    in_channels: usize,
    out_channels: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: Padding,
    bias: bool,
) -> Conv2d<F> {
    let mut conv = Conv2d::zeros(in_channels, out_channels, kernel, stride, padding, bias);
    let std = F::cast((2.0 / (in_channels * kernel.0 * kernel.1) as f64).sqrt());
    for v in conv.weight.iter_mut() {
        *v = F::sample_standard_normal(rng) * std;
    }
    conv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_scale_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let conv: Conv2d<f64> = he_conv(&mut rng, 64, 64, (3, 3), (1, 1), Padding::sym(1), false);
        let n = conv.weight.len() as f64;
        let mean = conv.weight.sum() / n;
        let var = conv.weight.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let want = 2.0 / (64.0 * 9.0);
        assert!(mean.abs() < 0.001, "mean {mean}");
        assert!((var - want).abs() < 0.2 * want, "var {var} vs {want}");
    }

    #[test]
    fn same_seed_same_weights() {
        let a: Conv2d<f32> = he_conv(
            &mut ChaCha8Rng::seed_from_u64(1),
            3,
            8,
            (3, 3),
            (1, 1),
            Padding::sym(1),
            true,
        );
        let b: Conv2d<f32> = he_conv(
            &mut ChaCha8Rng::seed_from_u64(1),
            3,
            8,
            (3, 3),
            (1, 1),
            Padding::sym(1),
            true,
        );
        assert_eq!(a.weight, b.weight);
    }
}
