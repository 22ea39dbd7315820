//! Conversions between metric depth and normalized disparity.
//!
//! The network predicts disparity through a sigmoid, so its outputs live in
//! (0, 1). A depth d in [min_depth, max_depth] maps to
//!
//! ```text
//! u = (1/clamp(d) - 1/max_depth) / (1/min_depth - 1/max_depth)
//! ```
//!
//! with u = 1 at the near plane and u = 0 at the far plane. The inverse
//! recovers depth from a prediction. Neither direction carries gradients:
//! depth-side inputs are ground truth, and the inverse is used at inference
//! only.

use ndarray::Array4;

use crate::{Error, Result, Scalar};

fn check_range<F: Scalar>(min_depth: F, max_depth: F) -> Result<()> {
    if !(min_depth > F::zero() && max_depth > min_depth) {
        return Err(Error::Config(format!(
            "need 0 < min_depth < max_depth, got {} and {}",
            min_depth.to_f64(),
            max_depth.to_f64()
        )));
    }
    Ok(())
}

pub fn depth_to_normdisp_scalar<F: Scalar>(depth: F, min_depth: F, max_depth: F) -> F {
    let d = depth.max(min_depth).min(max_depth);
    let inv_max = F::one() / max_depth;
    (F::one() / d - inv_max) / (F::one() / min_depth - inv_max)
}

pub fn normdisp_to_depth_scalar<F: Scalar>(disp: F, min_depth: F, max_depth: F) -> F {
    let inv_max = F::one() / max_depth;
    let inv = disp * (F::one() / min_depth - inv_max) + inv_max;
    F::one() / inv
}

/// Maps metric depth to normalized disparity, clamping depth into the range.
pub fn depth_to_normdisp<F: Scalar>(
    depth: &Array4<F>,
    min_depth: F,
    max_depth: F,
) -> Result<Array4<F>> {
    check_range(min_depth, max_depth)?;
    if let Some(bad) = depth.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("depth value {bad}")));
    }
    Ok(depth.mapv(|d| depth_to_normdisp_scalar(d, min_depth, max_depth)))
}

/// Maps normalized disparity back to metric depth.
pub fn normdisp_to_depth<F: Scalar>(
    disp: &Array4<F>,
    min_depth: F,
    max_depth: F,
) -> Result<Array4<F>> {
    check_range(min_depth, max_depth)?;
    if let Some(bad) = disp.iter().find(|v| !v.is_finite() || **v < F::zero()) {
        return Err(Error::NonFinite(format!("disparity value {bad}")));
    }
    Ok(disp.mapv(|u| normdisp_to_depth_scalar(u, min_depth, max_depth)))
}
