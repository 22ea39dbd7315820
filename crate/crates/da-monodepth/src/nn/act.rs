//! Elementwise activations.
//!
//! Backward passes take the cached forward *output*: for every activation
//! here the derivative is recoverable from the output alone, which avoids
//! keeping both input and output alive. At the ReLU-family kink (x == 0) the
//! derivative is taken from the negative side.

use ndarray::{Array, Dimension, Zip};

use crate::Scalar;

pub fn relu<F: Scalar, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| v.max(F::zero()))
}

pub fn relu_backward<F: Scalar, D: Dimension>(
    out: &Array<F, D>,
    gout: &Array<F, D>,
) -> Array<F, D> {
    Zip::from(out)
        .and(gout)
        .map_collect(|&o, &g| if o > F::zero() { g } else { F::zero() })
}

pub fn leaky_relu<F: Scalar, D: Dimension>(x: &Array<F, D>, slope: F) -> Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { v * slope })
}

pub fn leaky_relu_backward<F: Scalar, D: Dimension>(
    out: &Array<F, D>,
    gout: &Array<F, D>,
    slope: F,
) -> Array<F, D> {
    // slope > 0 keeps the output sign equal to the input sign.
    Zip::from(out)
        .and(gout)
        .map_collect(|&o, &g| if o > F::zero() { g } else { g * slope })
}

/// ELU with alpha = 1: x for x > 0, exp(x) - 1 otherwise.
pub fn elu<F: Scalar, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { v.exp() - F::one() })
}

pub fn elu_backward<F: Scalar, D: Dimension>(
    out: &Array<F, D>,
    gout: &Array<F, D>,
) -> Array<F, D> {
    // For x <= 0 the output is exp(x) - 1, so the derivative exp(x) is out + 1.
    Zip::from(out)
        .and(gout)
        .map_collect(|&o, &g| if o > F::zero() { g } else { g * (o + F::one()) })
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid<F: Scalar, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(sigmoid_scalar)
}

pub fn sigmoid_scalar<F: Scalar>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

pub fn sigmoid_backward<F: Scalar, D: Dimension>(
    out: &Array<F, D>,
    gout: &Array<F, D>,
) -> Array<F, D> {
    Zip::from(out)
        .and(gout)
        .map_collect(|&o, &g| g * o * (F::one() - o))
}
