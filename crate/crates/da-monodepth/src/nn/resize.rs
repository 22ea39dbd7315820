//! Spatial resizing with half-pixel source mapping.
//!
//! Bilinear resize maps destination cell `d` to source coordinate
//! `(d + 0.5) * in/out - 0.5`, clamped at the borders, and blends the two
//! nearest taps per axis. `resize_bilinear_adjoint` is the exact transpose of
//! the forward map, which is what backprop through an upsample needs:
//! `<g, resize(x)> == <adjoint(g), x>` holds to rounding error.

use ndarray::Array4;

use crate::{parallel, Error, Result, Scalar};

/// Per-axis tap table: indices of the two source cells and the weight of the
/// second one.
fn tap_table<F: Scalar>(n_in: usize, n_out: usize) -> Vec<(usize, usize, F)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, F::cast(src - i0 as f64))
        })
        .collect()
}

fn check_sizes(label: &str, h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::shape(label, "nonzero size", format!("{h}x{w}")));
    }
    Ok(())
}

pub fn resize_bilinear<F: Scalar>(x: &Array4<F>, out_hw: (usize, usize)) -> Result<Array4<F>> {
    let (b, c, h, w) = x.dim();
    let (oh, ow) = out_hw;
    check_sizes("resize input", h, w)?;
    check_sizes("resize target", oh, ow)?;
    let ytab = tap_table::<F>(h, oh);
    let xtab = tap_table::<F>(w, ow);
    let mut out = Array4::zeros((b, c, oh, ow));
    parallel::zip_samples_mut(&mut out, &x.view(), |_, mut ob, xb| {
        for ci in 0..c {
            let src = xb.index_axis(ndarray::Axis(0), ci);
            let src = src.to_slice().expect("standard layout");
            let mut dst = ob.index_axis_mut(ndarray::Axis(0), ci);
            let dst = dst.as_slice_mut().expect("standard layout");
            for (oy, &(y0, y1, ly)) in ytab.iter().enumerate() {
                let r0 = &src[y0 * w..y0 * w + w];
                let r1 = &src[y1 * w..y1 * w + w];
                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                for (cell, &(x0, x1, lx)) in drow.iter_mut().zip(xtab.iter()) {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * lx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * lx;
                    *cell = top + (bot - top) * ly;
                }
            }
        }
    });
    Ok(out)
}

/// Transpose of [`resize_bilinear`]: scatters an `out_hw`-sized gradient back
/// to `in_hw`.
pub fn resize_bilinear_adjoint<F: Scalar>(
    gout: &Array4<F>,
    in_hw: (usize, usize),
) -> Result<Array4<F>> {
    let (b, c, oh, ow) = gout.dim();
    let (h, w) = in_hw;
    check_sizes("resize adjoint target", h, w)?;
    check_sizes("resize adjoint input", oh, ow)?;
    let ytab = tap_table::<F>(h, oh);
    let xtab = tap_table::<F>(w, ow);
    let mut gx = Array4::zeros((b, c, h, w));
    parallel::zip_samples_mut(&mut gx, &gout.view(), |_, mut gxb, gob| {
        for ci in 0..c {
            let go = gob.index_axis(ndarray::Axis(0), ci);
            let go = go.to_slice().expect("standard layout");
            let mut gi = gxb.index_axis_mut(ndarray::Axis(0), ci);
            let gi = gi.as_slice_mut().expect("standard layout");
            for (oy, &(y0, y1, ly)) in ytab.iter().enumerate() {
                let grow = &go[oy * ow..(oy + 1) * ow];
                for (&g, &(x0, x1, lx)) in grow.iter().zip(xtab.iter()) {
                    let wy0 = F::one() - ly;
                    let wx0 = F::one() - lx;
                    gi[y0 * w + x0] = gi[y0 * w + x0] + g * wy0 * wx0;
                    gi[y0 * w + x1] = gi[y0 * w + x1] + g * wy0 * lx;
                    gi[y1 * w + x0] = gi[y1 * w + x0] + g * ly * wx0;
                    gi[y1 * w + x1] = gi[y1 * w + x1] + g * ly * lx;
                }
            }
        }
    });
    Ok(gx)
}

/// Nearest-neighbor resize with centered mapping; preserves the input's value
/// set, so it is safe for label maps.
pub fn resize_nearest<F: Scalar>(x: &Array4<F>, out_hw: (usize, usize)) -> Result<Array4<F>> {
    let (b, c, h, w) = x.dim();
    let (oh, ow) = out_hw;
    check_sizes("resize input", h, w)?;
    check_sizes("resize target", oh, ow)?;
    let ymap: Vec<usize> = (0..oh)
        .map(|d| (((d as f64 + 0.5) * h as f64 / oh as f64).floor() as usize).min(h - 1))
        .collect();
    let xmap: Vec<usize> = (0..ow)
        .map(|d| (((d as f64 + 0.5) * w as f64 / ow as f64).floor() as usize).min(w - 1))
        .collect();
    let mut out = Array4::zeros((b, c, oh, ow));
    parallel::zip_samples_mut(&mut out, &x.view(), |_, mut ob, xb| {
        for ci in 0..c {
            let src = xb.index_axis(ndarray::Axis(0), ci);
            let src = src.to_slice().expect("standard layout");
            let mut dst = ob.index_axis_mut(ndarray::Axis(0), ci);
            let dst = dst.as_slice_mut().expect("standard layout");
            for (oy, &sy) in ymap.iter().enumerate() {
                let srow = &src[sy * w..sy * w + w];
                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                for (cell, &sx) in drow.iter_mut().zip(xmap.iter()) {
                    *cell = srow[sx];
                }
            }
        }
    });
    Ok(out)
}
