//! Pixelwise and structural appearance losses.
//!
//! `l1_loss` is the mean absolute difference. `ssim_loss` computes the
//! structural-similarity index over 3x3 mean-pool windows (valid positions
//! only, no padding, biased variance, C1 = 0.01^2, C2 = 0.03^2) and returns
//! `mean((1 - ssim) / 2)`, so identical inputs score exactly 0 and the loss
//! grows toward 1 as structure diverges. Both return the gradient with
//! respect to the first argument; the second is treated as a constant.

use ndarray::{Array3, Array4};

use crate::{parallel, Error, Result, Scalar};

fn check_same_shape<F: Scalar>(what: &str, a: &Array4<F>, b: &Array4<F>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(what, format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    Ok(())
}

/// Mean absolute difference over valid pixels. `mask` marks the pixels that
/// count; `None` treats every pixel as valid.
pub fn l1_loss<F: Scalar>(
    pred: &Array4<F>,
    target: &Array4<F>,
    mask: Option<&Array4<bool>>,
) -> Result<(F, Array4<F>)> {
    check_same_shape("l1 operands", pred, target)?;
    if let Some(m) = mask {
        if m.dim() != pred.dim() {
            return Err(Error::shape(
                "l1 mask",
                format!("{:?}", pred.dim()),
                format!("{:?}", m.dim()),
            ));
        }
    }
    let valid = |i: usize| mask.is_none_or(|m| m.as_slice().expect("standard layout")[i]);
    let n_valid = match mask {
        None => pred.len(),
        Some(m) => m.iter().filter(|&&v| v).count(),
    };
    if n_valid == 0 {
        return Err(Error::NoValidPixels("l1 loss".into()));
    }
    let n = F::from_usize(n_valid);
    let mut sum = F::zero();
    let mut grad = Array4::zeros(pred.dim());
    let gflat = grad.as_slice_mut().expect("standard layout");
    for (i, (&p, &t)) in pred.iter().zip(target.iter()).enumerate() {
        if !valid(i) {
            continue;
        }
        sum = sum + (p - t).abs();
        gflat[i] = if p > t {
            F::one() / n
        } else if p < t {
            -F::one() / n
        } else {
            F::zero()
        };
    }
    Ok((sum / n, grad))
}

const SSIM_C1: f64 = 1e-4;
const SSIM_C2: f64 = 9e-4;

pub fn ssim_loss<F: Scalar>(pred: &Array4<F>, target: &Array4<F>) -> Result<(F, Array4<F>)> {
    check_same_shape("ssim operands", pred, target)?;
    let (b, c, h, w) = pred.dim();
    if h < 3 || w < 3 {
        return Err(Error::shape("ssim input", "at least 3x3", format!("{h}x{w}")));
    }
    let (c1, c2) = (F::cast(SSIM_C1), F::cast(SSIM_C2));
    let inv9 = F::cast(1.0 / 9.0);
    let (one, two, half) = (F::one(), F::cast(2.0), F::cast(0.5));

    // Per-sample partial losses and gradients, reduced in batch order.
    let results: Vec<(F, Array3<F>)> = parallel::map_indexed(b, |bi| {
        let mut gsample = Array3::zeros((c, h, w));
        let mut lsum = F::zero();
        for ci in 0..c {
            let pb = pred.index_axis(ndarray::Axis(0), bi);
            let pp = pb.index_axis(ndarray::Axis(0), ci);
            let p = pp.to_slice().expect("standard layout");
            let tb = target.index_axis(ndarray::Axis(0), bi);
            let tp = tb.index_axis(ndarray::Axis(0), ci);
            let t = tp.to_slice().expect("standard layout");
            let mut gc = gsample.index_axis_mut(ndarray::Axis(0), ci);
            let g = gc.as_slice_mut().expect("standard layout");
            for oy in 0..h - 2 {
                for ox in 0..w - 2 {
                    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) =
                        (F::zero(), F::zero(), F::zero(), F::zero(), F::zero());
                    for dy in 0..3 {
                        let row = (oy + dy) * w + ox;
                        for dx in 0..3 {
                            let xv = p[row + dx];
                            let yv = t[row + dx];
                            sx = sx + xv;
                            sy = sy + yv;
                            sxx = sxx + xv * xv;
                            syy = syy + yv * yv;
                            sxy = sxy + xv * yv;
                        }
                    }
                    let mx = sx * inv9;
                    let my = sy * inv9;
                    let vx = sxx * inv9 - mx * mx;
                    let vy = syy * inv9 - my * my;
                    let vxy = sxy * inv9 - mx * my;
                    let a1 = two * mx * my + c1;
                    let a2 = two * vxy + c2;
                    let b1 = mx * mx + my * my + c1;
                    let b2 = vx + vy + c2;
                    let s = (a1 * a2) / (b1 * b2);
                    lsum = lsum + (one - s) * half;

                    let ds_dmx = (two * my * a2) / (b1 * b2) - (two * mx * a1 * a2) / (b1 * b1 * b2);
                    let ds_dvx = -(a1 * a2) / (b1 * b2 * b2);
                    let ds_dvxy = (two * a1) / (b1 * b2);
                    // d(1-s)/2 per window member, biased-variance chain.
                    let k1 = -half * ds_dmx * inv9;
                    let k2 = -half * ds_dvx * inv9 * two;
                    let k3 = -half * ds_dvxy * inv9;
                    for dy in 0..3 {
                        let row = (oy + dy) * w + ox;
                        for dx in 0..3 {
                            let xv = p[row + dx];
                            let yv = t[row + dx];
                            g[row + dx] =
                                g[row + dx] + k1 + k2 * (xv - mx) + k3 * (yv - my);
                        }
                    }
                }
            }
        }
        (lsum, gsample)
    });

    let n_wins = F::from_usize(b * c * (h - 2) * (w - 2));
    let mut total = F::zero();
    let mut grad = Array4::zeros(pred.raw_dim());
    for (bi, (l, gs)) in results.into_iter().enumerate() {
        total = total + l;
        grad.index_axis_mut(ndarray::Axis(0), bi).assign(&gs);
    }
    grad.mapv_inplace(|v| v / n_wins);
    Ok((total / n_wins, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand4(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dim, |_| rng.random_range(0.05..0.95))
    }

    #[test]
    fn l1_simple_values() {
        let p = ndarray::arr1(&[1.0_f64, 2.0, 5.0]).into_shape_with_order((1, 1, 1, 3)).unwrap();
        let t = ndarray::arr1(&[2.0_f64, 2.0, 1.0]).into_shape_with_order((1, 1, 1, 3)).unwrap();
        let (l, g) = l1_loss(&p, &t, None).unwrap();
        assert!((l - 5.0 / 3.0).abs() < 1e-15);
        let want = [-1.0 / 3.0, 0.0, 1.0 / 3.0];
        for (a, b) in g.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn l1_mask_restricts_the_mean() {
        let p = ndarray::arr1(&[0.2_f64, 0.6]).into_shape_with_order((1, 1, 1, 2)).unwrap();
        let t = ndarray::arr1(&[0.1_f64, 0.6]).into_shape_with_order((1, 1, 1, 2)).unwrap();
        let (l, _) = l1_loss(&p, &t, None).unwrap();
        assert!((l - 0.05).abs() < 1e-15);

        let mut mask = Array4::from_elem((1, 1, 1, 2), true);
        mask[(0, 0, 0, 0)] = false;
        let (l, g) = l1_loss(&p, &t, Some(&mask)).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g[(0, 0, 0, 0)], 0.0);

        let none = Array4::from_elem((1, 1, 1, 2), false);
        assert!(matches!(l1_loss(&p, &t, Some(&none)), Err(Error::NoValidPixels(_))));
    }

    #[test]
    fn ssim_of_identical_inputs_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let a = rand4(&mut rng, (2, 1, 6, 7));
        let (l, g) = ssim_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn ssim_constant_plane_reference_value() {
        let p = Array4::from_elem((1, 1, 5, 5), 0.3_f64);
        let t = Array4::from_elem((1, 1, 5, 5), 0.7_f64);
        let (l, _) = ssim_loss(&p, &t).unwrap();
        // mu_x = 0.3, mu_y = 0.7, all variances zero.
        let a1: f64 = 2.0 * 0.3 * 0.7 + 1e-4;
        let b1: f64 = 0.09 + 0.49 + 1e-4;
        let want = (1.0 - a1 / b1) / 2.0;
        assert!((l - want).abs() < 1e-12, "{l} vs {want}");
    }

    #[test]
    fn ssim_value_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let a = rand4(&mut rng, (1, 1, 8, 8));
        let b = rand4(&mut rng, (1, 1, 8, 8));
        let (lab, _) = ssim_loss(&a, &b).unwrap();
        let (lba, _) = ssim_loss(&b, &a).unwrap();
        assert!((lab - lba).abs() < 1e-12);
    }

    #[test]
    fn ssim_loss_lies_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let a = rand4(&mut rng, (1, 1, 6, 6));
            let b = rand4(&mut rng, (1, 1, 6, 6));
            let (l, _) = ssim_loss(&a, &b).unwrap();
            assert!((0.0..=1.0).contains(&l), "loss {l}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let p = rand4(&mut rng, (1, 1, 6, 6));
        let t = rand4(&mut rng, (1, 1, 6, 6));
        let eps = 1e-6;

        let (_, g_l1) = l1_loss(&p, &t, None).unwrap();
        let (_, g_ssim) = ssim_loss(&p, &t).unwrap();
        for idx in [(0, 0, 0, 0), (0, 0, 5, 5), (0, 0, 3, 2)] {
            let mut pp = p.clone();
            pp[idx] += eps;
            let up_l1 = l1_loss(&pp, &t, None).unwrap().0;
            let up_ss = ssim_loss(&pp, &t).unwrap().0;
            pp[idx] -= 2.0 * eps;
            let dn_l1 = l1_loss(&pp, &t, None).unwrap().0;
            let dn_ss = ssim_loss(&pp, &t).unwrap().0;
            let fd_l1 = (up_l1 - dn_l1) / (2.0 * eps);
            let fd_ss = (up_ss - dn_ss) / (2.0 * eps);
            assert!((g_l1[idx] - fd_l1).abs() < 1e-8, "l1 {} vs {}", g_l1[idx], fd_l1);
            assert!((g_ssim[idx] - fd_ss).abs() < 1e-8, "ssim {} vs {}", g_ssim[idx], fd_ss);
        }
    }

    #[test]
    fn rejects_mismatched_or_tiny_inputs() {
        let a = Array4::<f64>::zeros((1, 1, 6, 6));
        let b = Array4::<f64>::zeros((1, 1, 6, 5));
        assert!(l1_loss(&a, &b, None).is_err());
        assert!(ssim_loss(&a, &b).is_err());
        let tiny = Array4::<f64>::zeros((1, 1, 2, 6));
        assert!(ssim_loss(&tiny, &tiny).is_err());
    }
}
