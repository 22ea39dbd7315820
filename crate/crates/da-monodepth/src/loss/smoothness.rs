//! Edge-aware disparity smoothness.
//!
//! The disparity plane is first normalized by its per-sample mean, which
//! makes the loss invariant to rescaling the whole map. Forward differences
//! of the normalized disparity are penalized, each weighted by
//! exp(-mean_c |image difference|) so depth edges that coincide with image
//! edges cost little. Horizontal and vertical terms are averaged over their
//! own difference counts and summed.
//!
//! The disparity must have a strictly positive mean (sigmoid outputs always
//! do); there is no epsilon hiding a degenerate input.

use ndarray::{Array4, Axis};

use crate::{parallel, Error, Result, Scalar};

pub fn smoothness_loss<F: Scalar>(
    disp: &Array4<F>,
    image: &Array4<F>,
) -> Result<(F, Array4<F>)> {
    let (b, dc, h, w) = disp.dim();
    let (ib, ic, ih, iw) = image.dim();
    if dc != 1 {
        return Err(Error::shape("smoothness disparity channels", 1usize, dc));
    }
    if ib != b || (ih, iw) != (h, w) {
        return Err(Error::shape(
            "smoothness image",
            format!("[{b}, any, {h}, {w}]"),
            format!("[{ib}, {ic}, {ih}, {iw}]"),
        ));
    }
    if h < 2 || w < 2 {
        return Err(Error::shape("smoothness input", "at least 2x2", format!("{h}x{w}")));
    }

    let n = F::from_usize(h * w);
    let nx = F::from_usize(b * h * (w - 1));
    let ny = F::from_usize(b * (h - 1) * w);
    let inv_c = F::one() / F::from_usize(ic);

    for bi in 0..b {
        let plane = disp.index_axis(Axis(0), bi);
        let mean = plane.iter().fold(F::zero(), |a, &v| a + v) / n;
        if !(mean > F::zero()) || !mean.is_finite() {
            return Err(Error::NonFinite(format!(
                "disparity sample {bi} has non-positive mean {}",
                mean.to_f64()
            )));
        }
    }

    let results: Vec<(F, ndarray::Array2<F>)> = parallel::map_indexed(b, |bi| {
        let db = disp.index_axis(Axis(0), bi);
        let dp = db.index_axis(Axis(0), 0);
        let d = dp.to_slice().expect("standard layout");
        let img = image.index_axis(Axis(0), bi);

        let mean = d.iter().fold(F::zero(), |a, &v| a + v) / n;
        // `u` is the mean-normalized disparity; gradients accumulate in `gu`
        // and are mapped back through the normalization at the end.
        let u: Vec<F> = d.iter().map(|&v| v / mean).collect();
        let mut gu = vec![F::zero(); h * w];
        let mut lsum_x = F::zero();
        let mut lsum_y = F::zero();

        let edge_weight = |y0: usize, x0: usize, y1: usize, x1: usize| -> F {
            let mut acc = F::zero();
            for c in 0..ic {
                acc = acc + (img[(c, y1, x1)] - img[(c, y0, x0)]).abs();
            }
            (-(acc * inv_c)).exp()
        };

        for y in 0..h {
            for x in 0..w - 1 {
                let wgt = edge_weight(y, x, y, x + 1);
                let diff = u[y * w + x + 1] - u[y * w + x];
                lsum_x = lsum_x + diff.abs() * wgt;
                let s = if diff > F::zero() {
                    F::one()
                } else if diff < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                };
                gu[y * w + x + 1] = gu[y * w + x + 1] + s * wgt / nx;
                gu[y * w + x] = gu[y * w + x] - s * wgt / nx;
            }
        }
        for y in 0..h - 1 {
            for x in 0..w {
                let wgt = edge_weight(y, x, y + 1, x);
                let diff = u[(y + 1) * w + x] - u[y * w + x];
                lsum_y = lsum_y + diff.abs() * wgt;
                let s = if diff > F::zero() {
                    F::one()
                } else if diff < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                };
                gu[(y + 1) * w + x] = gu[(y + 1) * w + x] + s * wgt / ny;
                gu[y * w + x] = gu[y * w + x] - s * wgt / ny;
            }
        }

        // d/dd of u = d/mean: identity part plus the mean's response.
        let dot = gu.iter().zip(u.iter()).fold(F::zero(), |a, (&g, &uv)| a + g * uv);
        let mut gd = ndarray::Array2::zeros((h, w));
        for (i, g) in gd.iter_mut().enumerate() {
            *g = (gu[i] - dot / n) / mean;
        }
        (lsum_x / nx + lsum_y / ny, gd)
    });

    let mut total = F::zero();
    let mut grad = Array4::zeros(disp.raw_dim());
    for (bi, (l, gs)) in results.into_iter().enumerate() {
        total = total + l;
        grad.index_axis_mut(Axis(0), bi).index_axis_mut(Axis(0), 0).assign(&gs);
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_disp(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dim, |_| rng.random_range(0.1..0.9))
    }

    #[test]
    fn constant_disparity_costs_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let d = Array4::from_elem((2, 1, 5, 5), 0.4);
        let img = rand_disp(&mut rng, (2, 3, 5, 5));
        let (l, g) = smoothness_loss(&d, &img).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn invariant_to_disparity_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let d = rand_disp(&mut rng, (2, 1, 6, 6));
        let img = rand_disp(&mut rng, (2, 3, 6, 6));
        let (l, _) = smoothness_loss(&d, &img).unwrap();
        for c in [0.5, 2.0, 3.7, 128.0] {
            let (lc, _) = smoothness_loss(&(&d * c), &img).unwrap();
            assert!(
                (l - lc).abs() < 1e-12 * l.max(1.0),
                "scale {c}: {l} vs {lc}"
            );
        }
    }

    #[test]
    fn image_edges_discount_disparity_edges() {
        // Same disparity step; once on a flat image, once on an image with a
        // coinciding strong edge. The edge-aware weight must shrink the loss.
        let mut d = Array4::from_elem((1, 1, 4, 4), 0.3);
        for y in 0..4 {
            for x in 2..4 {
                d[(0, 0, y, x)] = 0.7;
            }
        }
        let flat = Array4::from_elem((1, 3, 4, 4), 0.5);
        let mut edged = flat.clone();
        for c in 0..3 {
            for y in 0..4 {
                for x in 2..4 {
                    edged[(0, c, y, x)] = 5.0;
                }
            }
        }
        let (l_flat, _) = smoothness_loss(&d, &flat).unwrap();
        let (l_edged, _) = smoothness_loss(&d, &edged).unwrap();
        assert!(l_edged < l_flat, "{l_edged} vs {l_flat}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let d = rand_disp(&mut rng, (1, 1, 6, 6));
        let img = rand_disp(&mut rng, (1, 3, 6, 6));
        let (_, g) = smoothness_loss(&d, &img).unwrap();
        let eps = 1e-7;
        for idx in [(0, 0, 0, 0), (0, 0, 5, 5), (0, 0, 2, 3), (0, 0, 4, 1)] {
            let mut dp = d.clone();
            dp[idx] += eps;
            let up = smoothness_loss(&dp, &img).unwrap().0;
            dp[idx] -= 2.0 * eps;
            let dn = smoothness_loss(&dp, &img).unwrap().0;
            let fd = (up - dn) / (2.0 * eps);
            assert!((g[idx] - fd).abs() < 1e-6, "{} vs {}", g[idx], fd);
        }
    }

    #[test]
    fn zero_mean_disparity_is_rejected() {
        let d = Array4::<f64>::zeros((1, 1, 4, 4));
        let img = Array4::<f64>::zeros((1, 3, 4, 4));
        assert!(smoothness_loss(&d, &img).is_err());
    }
}
