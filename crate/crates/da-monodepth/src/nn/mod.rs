//! Neural-network primitives with explicit forward and backward passes.
//!
//! Every op takes and returns plain `ndarray` tensors in `[batch, channel,
//! height, width]` layout. Backward passes are hand-derived and verified
//! against central finite differences in the test suites; nothing here hides
//! behind an autodiff tape, which keeps the gradient contracts (reversal,
//! shared-block averaging, freeze behavior) inspectable.

pub mod act;
pub mod conv;
pub mod init;
pub mod norm;
pub mod pool;
pub mod resize;

pub use act::{elu, elu_backward, leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid, sigmoid_backward};
pub use conv::{Conv2d, Conv2dGrad, Padding};
pub use norm::{BatchNorm2d, BatchNorm2dGrad, BnCache};
pub use pool::{max_pool2d_3x3s2, max_pool2d_3x3s2_backward, PoolCache};
pub use resize::{resize_bilinear, resize_bilinear_adjoint, resize_nearest};

use crate::Scalar;

/// Visits the trainable parameters of a layer or model in a stable order.
///
/// The same ordering is used by the optimizer, the checkpoint codec, and the
/// parameter counter, so state stays aligned without a registry. Gradient
/// holders implement the trait too, which lets callers zip a model with its
/// gradients positionally.
pub trait ParamVisit<F: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F]));

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F]));

    /// Non-trainable state carried alongside parameters (e.g. normalization
    /// running statistics). Checkpointed, but never touched by the optimizer.
    fn visit_buffers<'a>(&'a self, _prefix: &str, _f: &mut dyn FnMut(String, &[usize], &'a [F])) {}

    fn visit_buffers_mut<'a>(
        &'a mut self,
        _prefix: &str,
        _f: &mut dyn FnMut(String, &[usize], &'a mut [F]),
    ) {
    }
}

/// Total number of trainable scalars reachable from `p`.
pub fn param_count<F: Scalar>(p: &impl ParamVisit<F>) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, _, data| n += data.len());
    n
}
