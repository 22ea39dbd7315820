//! Max pooling (3x3 window, stride 2, padding 1), the reduction the encoder
//! stem uses. Padded cells never win: the window always covers at least one
//! real pixel, and the maximum is taken over real pixels only. Ties go to the
//! first cell in row-major scan order, recorded in the cache so backward
//! routes each output gradient to exactly one input.

use ndarray::Array4;

use crate::{parallel, Error, Result, Scalar};

/// Flat per-plane index (ih * w + iw) of the winning input for each output.
#[derive(Debug)]
pub struct PoolCache {
    pub argmax: Array4<u32>,
    pub in_hw: (usize, usize),
}

pub fn out_hw(h: usize, w: usize) -> (usize, usize) {
    ((h - 1) / 2 + 1, (w - 1) / 2 + 1)
}

pub fn max_pool2d_3x3s2<F: Scalar>(x: &Array4<F>) -> Result<(Array4<F>, PoolCache)> {
    let (b, c, h, w) = x.dim();
    if h < 2 || w < 2 {
        return Err(Error::shape("max_pool input", "at least 2x2", format!("{h}x{w}")));
    }
    if h * w > u32::MAX as usize {
        return Err(Error::shape("max_pool plane", "fits u32 indexing", h * w));
    }
    let (oh, ow) = out_hw(h, w);
    let mut out = Array4::zeros((b, c, oh, ow));
    let mut argmax = Array4::zeros((b, c, oh, ow));
    {
        let xv = x.view();
        let out_slice = out.as_slice_mut().expect("freshly allocated");
        let arg_slice = argmax.as_slice_mut().expect("freshly allocated");
        let plane_out = oh * ow;
        // Chunk both outputs per (batch, channel) plane; planes are
        // independent, so order of execution cannot matter.
        let pairs: Vec<(&mut [F], &mut [u32])> = out_slice
            .chunks_mut(plane_out)
            .zip(arg_slice.chunks_mut(plane_out))
            .collect();
        let work = |(bc, (oplane, aplane)): (usize, (&mut [F], &mut [u32]))| {
            let (bi, ci) = (bc / c, bc % c);
            let xplane = xv.index_axis(ndarray::Axis(0), bi);
            let xplane = xplane.index_axis(ndarray::Axis(0), ci);
            let xs = xplane.to_slice().expect("standard layout");
            for oy in 0..oh {
                let y0 = (2 * oy).saturating_sub(1);
                let y1 = (2 * oy + 2).min(h);
                for ox in 0..ow {
                    let x0 = (2 * ox).saturating_sub(1);
                    let x1 = (2 * ox + 2).min(w);
                    let mut best = xs[y0 * w + x0];
                    let mut best_idx = (y0 * w + x0) as u32;
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            let v = xs[iy * w + ix];
                            if v > best {
                                best = v;
                                best_idx = (iy * w + ix) as u32;
                            }
                        }
                    }
                    oplane[oy * ow + ox] = best;
                    aplane[oy * ow + ox] = best_idx;
                }
            }
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            pairs.into_par_iter().enumerate().for_each(work);
        }
        #[cfg(not(feature = "parallel"))]
        {
            pairs.into_iter().enumerate().for_each(work);
        }
    }
    Ok((out, PoolCache { argmax, in_hw: (h, w) }))
}

pub fn max_pool2d_3x3s2_backward<F: Scalar>(
    cache: &PoolCache,
    gout: &Array4<F>,
) -> Result<Array4<F>> {
    if gout.dim() != cache.argmax.dim() {
        return Err(Error::shape(
            "max_pool output gradient",
            format!("{:?}", cache.argmax.dim()),
            format!("{:?}", gout.dim()),
        ));
    }
    let (b, c, _, _) = gout.dim();
    let (h, w) = cache.in_hw;
    let mut gx = Array4::zeros((b, c, h, w));
    parallel::for_each_sample_mut(&mut gx, |bi, mut gxb| {
        for ci in 0..c {
            let mut plane = gxb.index_axis_mut(ndarray::Axis(0), ci);
            let gs = plane.as_slice_mut().expect("standard layout");
            let gob = gout.index_axis(ndarray::Axis(0), bi);
            let go = gob.index_axis(ndarray::Axis(0), ci);
            let ab = cache.argmax.index_axis(ndarray::Axis(0), bi);
            let am = ab.index_axis(ndarray::Axis(0), ci);
            for (&g, &idx) in go.iter().zip(am.iter()) {
                gs[idx as usize] = gs[idx as usize] + g;
            }
        }
    });
    Ok(gx)
}

// `parallel::for_each_sample_mut` splits over the batch axis; keep the
// channel loop inside so a sample's scatter order is fixed.
