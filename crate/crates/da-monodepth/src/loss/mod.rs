//! Training objectives.
//!
//! The depth objective compares predicted normalized disparity against the
//! ground truth converted into the same space. Every coarse scale is
//! upsampled to full resolution before its loss is computed; the per-scale
//! term mixes SSIM and L1 (weighted `1 - lambda1` and `lambda1`) plus an
//! edge-aware smoothness term whose weight `lambda2` halves at each coarser
//! scale. The total objective is a weighted sum of the depth, semantics, and
//! adversarial components; absent components (ablations) contribute nothing.

pub mod adversarial;
pub mod disparity;
pub mod photometric;
pub mod segmentation;
pub mod smoothness;

pub use adversarial::adversarial_loss;
pub use disparity::{
    depth_to_normdisp, depth_to_normdisp_scalar, normdisp_to_depth, normdisp_to_depth_scalar,
};
pub use photometric::{l1_loss, ssim_loss};
pub use segmentation::{seg_loss, IGNORE_LABEL};
pub use smoothness::smoothness_loss;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::model::ScaleOutputs;
use crate::nn::{resize_bilinear, resize_bilinear_adjoint};
use crate::{Error, Result, Scalar};

/// Depth interval the disparity parameterization covers, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        DepthRange { min_depth: 0.1, max_depth: 80.0 }
    }
}

/// Scalar weights of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// L1 share of the photometric mix; SSIM gets `1 - lambda1`.
    pub lambda1: f64,
    /// Smoothness weight at full resolution; halves per coarser scale.
    pub lambda2: f64,
    pub lambda_depth: f64,
    pub lambda_seg: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.15,
            lambda2: 1e-3,
            lambda_depth: 1.0,
            lambda_seg: 0.1,
            lambda_adv: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda1) {
            return Err(Error::Config(format!("lambda1 must be in [0,1], got {}", self.lambda1)));
        }
        for (name, v) in [
            ("lambda2", self.lambda2),
            ("lambda_depth", self.lambda_depth),
            ("lambda_seg", self.lambda_seg),
            ("lambda_adv", self.lambda_adv),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted components of one scale's depth term, kept for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScaleTerms {
    pub ssim: f64,
    pub l1: f64,
    pub smooth: f64,
}

/// Value, per-scale components, and disparity gradients of the depth
/// objective.
#[derive(Debug, Clone)]
pub struct DepthLossResult<F: Scalar> {
    pub total: F,
    /// Indexed by scale: 0 = full resolution, 3 = coarsest.
    pub per_scale: [ScaleTerms; 4],
    pub grads: ScaleOutputs<F>,
}

/// Multi-scale depth objective against ground-truth normalized disparity.
/// The returned total is unweighted (`lambda_depth` is applied by
/// [`total_loss`]); gradients are with respect to each scale's map.
pub fn depth_loss<F: Scalar>(
    disps: &ScaleOutputs<F>,
    gt_disp: &Array4<F>,
    image: &Array4<F>,
    weights: &LossWeights,
) -> Result<DepthLossResult<F>> {
    weights.validate()?;
    let (b, c, h, w) = gt_disp.dim();
    if c != 1 {
        return Err(Error::shape("ground-truth disparity channels", 1usize, c));
    }
    if disps[0].dim() != (b, 1, h, w) {
        return Err(Error::shape(
            "full-scale disparity",
            format!("{:?}", (b, 1usize, h, w)),
            format!("{:?}", disps[0].dim()),
        ));
    }
    let l1_w = F::cast(weights.lambda1);
    let ssim_w = F::one() - l1_w;

    let mut total = F::zero();
    let mut per_scale = [ScaleTerms::default(); 4];
    let mut grads: Vec<Array4<F>> = Vec::with_capacity(4);
    for (s, disp) in disps.iter().enumerate() {
        let (_, _, sh, sw) = disp.dim();
        let up = resize_bilinear(disp, (h, w))?;
        let (l_ssim, g_ssim) = ssim_loss(&up, gt_disp)?;
        let (l_l1, g_l1) = l1_loss(&up, gt_disp, None)?;
        let (l_sm, g_sm) = smoothness_loss(&up, image)?;
        per_scale[s] =
            ScaleTerms { ssim: l_ssim.to_f64(), l1: l_l1.to_f64(), smooth: l_sm.to_f64() };
        let sm_w = F::cast(weights.lambda2 / f64::powi(2.0, s as i32));
        total = total + ssim_w * l_ssim + l1_w * l_l1 + sm_w * l_sm;
        let mut g_up = g_ssim;
        g_up.zip_mut_with(&g_l1, |a, &b| *a = ssim_w * *a + l1_w * b);
        g_up.zip_mut_with(&g_sm, |a, &b| *a = *a + sm_w * b);
        grads.push(resize_bilinear_adjoint(&g_up, (sh, sw))?);
    }
    let grads: ScaleOutputs<F> = grads.try_into().expect("four scales");
    Ok(DepthLossResult { total, per_scale, grads })
}

/// Weighted sum of the objective components. Absent components contribute
/// nothing.
pub fn total_loss<F: Scalar>(
    l_depth: F,
    l_seg: Option<F>,
    l_adv: Option<F>,
    weights: &LossWeights,
) -> F {
    let mut t = F::cast(weights.lambda_depth) * l_depth;
    if let Some(s) = l_seg {
        t = t + F::cast(weights.lambda_seg) * s;
    }
    if let Some(a) = l_adv {
        t = t + F::cast(weights.lambda_adv) * a;
    }
    t
}

/// Component values of one training step. Fields for disabled branches stay
/// `None` and are omitted from serialized logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_depth: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_seg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_adv: Option<f64>,
    pub l_total: f64,
    pub per_scale: [ScaleTerms; 4],
}

impl LossBreakdown {
    pub fn compose(
        l_depth: f64,
        l_seg: Option<f64>,
        l_adv: Option<f64>,
        per_scale: [ScaleTerms; 4],
        weights: &LossWeights,
    ) -> Self {
        LossBreakdown {
            l_depth,
            l_seg,
            l_adv,
            l_total: total_loss(l_depth, l_seg, l_adv, weights),
            per_scale,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_total.is_finite()
            && self.l_depth.is_finite()
            && self.l_seg.is_none_or(f64::is_finite)
            && self.l_adv.is_none_or(f64::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn disp_pyramid(rng: &mut ChaCha8Rng, b: usize, hw: usize) -> ScaleOutputs<f64> {
        [hw, hw / 2, hw / 4, hw / 8]
            .map(|s| Array4::from_shape_fn((b, 1, s, s), |_| rng.random_range(0.05..0.95)))
    }

    #[test]
    fn total_loss_is_the_stated_weighted_sum() {
        let w = LossWeights::default();
        // Component values 2.0 (depth), 1.0 (semantics), 0.5 (adversarial)
        // with default weights 1.0, 0.1, 0.1.
        let t: f64 = total_loss(2.0, Some(1.0), Some(0.5), &w);
        assert!((t - 2.15).abs() < 1e-15, "{t}");
        // Ablations drop terms.
        let t: f64 = total_loss(2.0, None, None, &w);
        assert!((t - 2.0).abs() < 1e-15);
    }

    #[test]
    fn total_loss_is_linear_in_each_component() {
        let w = LossWeights {
            lambda_depth: 0.7,
            lambda_seg: 0.3,
            lambda_adv: 0.2,
            ..LossWeights::default()
        };
        let base: f64 = total_loss(1.0, Some(1.0), Some(1.0), &w);
        let bump_d: f64 = total_loss(2.0, Some(1.0), Some(1.0), &w);
        let bump_s: f64 = total_loss(1.0, Some(2.0), Some(1.0), &w);
        let bump_a: f64 = total_loss(1.0, Some(1.0), Some(2.0), &w);
        assert!((bump_d - base - 0.7).abs() < 1e-15);
        assert!((bump_s - base - 0.3).abs() < 1e-15);
        assert!((bump_a - base - 0.2).abs() < 1e-15);
    }

    #[test]
    fn breakdown_total_matches_total_loss_and_skips_absent_fields() {
        let w = LossWeights::default();
        let b = LossBreakdown::compose(2.0, None, None, [ScaleTerms::default(); 4], &w);
        assert_eq!(b.l_total, 2.0);
        let json = serde_json::to_string(&b).unwrap();
        assert!(!json.contains("l_seg") && !json.contains("l_adv"), "{json}");

        let b = LossBreakdown::compose(2.0, Some(1.0), Some(0.5), [ScaleTerms::default(); 4], &w);
        assert!((b.l_total - 2.15).abs() < 1e-15);
        let json = serde_json::to_string(&b).unwrap();
        assert!(json.contains("l_seg") && json.contains("l_adv"), "{json}");
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let bad = LossWeights { lambda1: 1.5, ..LossWeights::default() };
        assert!(bad.validate().is_err());
        let bad = LossWeights { lambda_adv: -0.1, ..LossWeights::default() };
        assert!(bad.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }

    #[test]
    fn perfect_prediction_leaves_only_coarse_scale_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let gt = Array4::from_shape_fn((1, 1, 8, 8), |_| rng.random_range(2.0..60.0));
        let range = DepthRange::default();
        let gt_disp = depth_to_normdisp(&gt, range.min_depth, range.max_depth).unwrap();
        let disps: ScaleOutputs<f64> = [
            gt_disp.clone(),
            resize_bilinear(&gt_disp, (4, 4)).unwrap(),
            resize_bilinear(&gt_disp, (2, 2)).unwrap(),
            resize_bilinear(&gt_disp, (1, 1)).unwrap(),
        ];
        let image = Array4::from_shape_fn((1, 3, 8, 8), |_| rng.random_range(0.0..1.0));
        let w = LossWeights::default();
        let full = depth_loss(&disps, &gt_disp, &image, &w).unwrap();
        let no_smooth =
            depth_loss(&disps, &gt_disp, &image, &LossWeights { lambda2: 0.0, ..w }).unwrap();
        // Scale 0 matches exactly, so without smoothness only the coarse
        // scales' interpolation error remains.
        assert_eq!(full.per_scale[0].ssim, 0.0);
        assert_eq!(full.per_scale[0].l1, 0.0);
        assert!(no_smooth.total < full.total);
        assert!(no_smooth.total < 0.2, "{}", no_smooth.total);
    }

    #[test]
    fn pure_l1_configuration_decomposes_into_l1_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let disps = disp_pyramid(&mut rng, 2, 8);
        let gt_disp = Array4::from_shape_fn((2, 1, 8, 8), |_| rng.random_range(0.05..0.95));
        let image = Array4::from_shape_fn((2, 3, 8, 8), |_| rng.random_range(0.0..1.0));
        let w = LossWeights { lambda1: 1.0, lambda2: 0.0, ..LossWeights::default() };
        let got = depth_loss(&disps, &gt_disp, &image, &w).unwrap();
        let mut want = 0.0;
        for disp in disps.iter() {
            let up = resize_bilinear(disp, (8, 8)).unwrap();
            want += l1_loss(&up, &gt_disp, None).unwrap().0;
        }
        assert!((got.total - want).abs() < 1e-12, "{} vs {}", got.total, want);
    }

    #[test]
    fn gradient_matches_finite_differences_across_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let disps = disp_pyramid(&mut rng, 1, 8);
        let gt_disp = Array4::from_shape_fn((1, 1, 8, 8), |_| rng.random_range(0.05..0.95));
        let image = Array4::from_shape_fn((1, 3, 8, 8), |_| rng.random_range(0.0..1.0));
        let w = LossWeights::default();
        let grads = depth_loss(&disps, &gt_disp, &image, &w).unwrap().grads;

        let eps = 1e-6;
        for (s, idx) in [(0, (0, 0, 4, 4)), (1, (0, 0, 3, 1)), (2, (0, 0, 1, 1)), (3, (0, 0, 0, 0))]
        {
            let mut dp = disps.clone();
            dp[s][idx] += eps;
            let up = depth_loss(&dp, &gt_disp, &image, &w).unwrap().total;
            dp[s][idx] -= 2.0 * eps;
            let dn = depth_loss(&dp, &gt_disp, &image, &w).unwrap().total;
            let fd = (up - dn) / (2.0 * eps);
            assert!(
                (grads[s][idx] - fd).abs() < 1e-6,
                "scale {s}: {} vs {}",
                grads[s][idx],
                fd
            );
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let disps = disp_pyramid(&mut rng, 1, 8);
        let gt = Array4::from_elem((1, 1, 16, 16), 0.5);
        let image = Array4::zeros((1, 3, 8, 8));
        assert!(depth_loss(&disps, &gt, &image, &LossWeights::default()).is_err());
    }
}
