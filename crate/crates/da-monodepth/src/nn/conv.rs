//! 2D convolution via im2col and GEMM.
//!
//! Patches are gathered into a `[k, n]` column matrix (k = in_channels *
//! kernel_h * kernel_w, n = output cells) and multiplied against the
//! `[out_channels, k]` weight matrix. The column buffer is built strip by
//! strip over output rows so its size stays bounded regardless of image size.
//! Samples are processed independently (optionally in parallel); parameter
//! gradients are reduced over samples in index order so results do not depend
//! on the execution mode.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array4, ArrayView2, ArrayViewMut2};

use crate::nn::ParamVisit;
use crate::{parallel, Error, Result, Scalar};

/// Column-buffer budget in elements (~8 MB of f32 per worker).
const MAX_COL_ELEMS: usize = 1 << 21;

/// Per-side zero padding. Left/top and right/bottom may differ, which even
/// kernels need to preserve spatial size at stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const fn none() -> Self {
        Self::sym(0)
    }

    pub const fn sym(p: usize) -> Self {
        Padding { top: p, bottom: p, left: p, right: p }
    }

    /// Padding that keeps H and W unchanged for an even `k` kernel at
    /// stride 1: k/2 - 1 before, k/2 after.
    pub const fn same_even(k: usize) -> Self {
        Padding { top: k / 2 - 1, bottom: k / 2, left: k / 2 - 1, right: k / 2 }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    /// `[out_channels, in_channels, kernel_h, kernel_w]`.
    pub weight: Array4<F>,
    pub bias: Option<Array1<F>>,
    pub stride: (usize, usize),
    pub padding: Padding,
}

/// Gradient holder mirroring [`Conv2d`]; visits under the same names.
#[derive(Debug, Clone)]
pub struct Conv2dGrad<F> {
    pub weight: Array4<F>,
    pub bias: Option<Array1<F>>,
}

impl<F: Scalar> Conv2d<F> {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
        bias: bool,
    ) -> Self {
        Conv2d {
            weight: Array4::zeros((out_channels, in_channels, kernel.0, kernel.1)),
            bias: bias.then(|| Array1::zeros(out_channels)),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn kernel(&self) -> (usize, usize) {
        let (_, _, kh, kw) = self.weight.dim();
        (kh, kw)
    }

    /// Output spatial size for an `[h, w]` input.
    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let ph = h + self.padding.top + self.padding.bottom;
        let pw = w + self.padding.left + self.padding.right;
        if ph < kh || pw < kw {
            return Err(Error::shape(
                "conv2d input",
                format!("padded size >= {}x{} kernel", kh, kw),
                format!("{}x{} (padded {}x{})", h, w, ph, pw),
            ));
        }
        Ok(((ph - kh) / self.stride.0 + 1, (pw - kw) / self.stride.1 + 1))
    }

    fn check_input(&self, x: &Array4<F>) -> Result<(usize, usize, usize, usize, usize)> {
        let (b, ci, h, w) = x.dim();
        if ci != self.in_channels() {
            return Err(Error::shape("conv2d input channels", self.in_channels(), ci));
        }
        let (oh, ow) = self.out_hw(h, w)?;
        Ok((b, h, w, oh, ow))
    }

    pub fn forward(&self, x: &Array4<F>) -> Result<Array4<F>> {
        let (b, h, w, oh, ow) = self.check_input(x)?;
        let (co, ci, kh, kw) = self.weight.dim();
        let k = ci * kh * kw;
        let wmat = self.weight.to_shape((co, k)).expect("weight is contiguous");
        let strip = strip_rows(k, ow, oh);
        let mut out = Array4::zeros((b, co, oh, ow));
        parallel::zip_samples_mut(&mut out, &x.view(), |_, mut ob, xb| {
            let xs = xb.as_standard_layout();
            let xsl = xs.as_slice().expect("standard layout");
            let osl = ob.as_slice_mut().expect("freshly allocated");
            let mut buf = vec![F::zero(); k * strip * ow];
            let mut omat =
                ArrayViewMut2::from_shape((co, oh * ow), osl).expect("contiguous output");
            let mut oh0 = 0;
            while oh0 < oh {
                let oh1 = (oh0 + strip).min(oh);
                let n = (oh1 - oh0) * ow;
                im2col_strip(xsl, ci, (h, w), (kh, kw), self.stride, self.padding, ow, (oh0, oh1), &mut buf[..k * n]);
                let cols = ArrayView2::from_shape((k, n), &buf[..k * n]).expect("buffer sized");
                let mut sub = omat.slice_mut(s![.., oh0 * ow..oh1 * ow]);
                general_mat_mul(F::one(), &wmat.view(), &cols, F::zero(), &mut sub);
                oh0 = oh1;
            }
            if let Some(bias) = &self.bias {
                for (oc, mut row) in omat.outer_iter_mut().enumerate() {
                    row += bias[oc];
                }
            }
        });
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input. Gradients are sums over the batch, matching
    /// a scalar loss that already averages over whatever it averages over.
    pub fn backward(
        &self,
        x: &Array4<F>,
        gout: &Array4<F>,
        grads: &mut Conv2dGrad<F>,
    ) -> Result<Array4<F>> {
        let (b, h, w, oh, ow) = self.check_input(x)?;
        let (co, ci, kh, kw) = self.weight.dim();
        if gout.dim() != (b, co, oh, ow) {
            return Err(Error::shape(
                "conv2d output gradient",
                format!("{:?}", (b, co, oh, ow)),
                format!("{:?}", gout.dim()),
            ));
        }
        let k = ci * kh * kw;
        let wmat = self.weight.to_shape((co, k)).expect("weight is contiguous");
        let strip = strip_rows(k, ow, oh);

        let mut gx = Array4::zeros(x.raw_dim());
        parallel::zip_samples_mut(&mut gx, &gout.view(), |_, mut gxb, gob| {
            let gs = gob.as_standard_layout();
            let gmat =
                ArrayView2::from_shape((co, oh * ow), gs.as_slice().expect("standard layout"))
                    .expect("contiguous");
            let gxsl = gxb.as_slice_mut().expect("freshly allocated");
            let mut buf = vec![F::zero(); k * strip * ow];
            let mut oh0 = 0;
            while oh0 < oh {
                let oh1 = (oh0 + strip).min(oh);
                let n = (oh1 - oh0) * ow;
                let mut cols =
                    ArrayViewMut2::from_shape((k, n), &mut buf[..k * n]).expect("buffer sized");
                let sub = gmat.slice(s![.., oh0 * ow..oh1 * ow]);
                general_mat_mul(F::one(), &wmat.t(), &sub, F::zero(), &mut cols);
                col2im_strip(&buf[..k * n], gxsl, ci, (h, w), (kh, kw), self.stride, self.padding, ow, (oh0, oh1));
                oh0 = oh1;
            }
        });

        // Per-sample weight/bias partials, then an index-ordered reduction so
        // parallel and sequential modes produce identical bits.
        let partials: Vec<(Array2<F>, Option<Array1<F>>)> = parallel::map_indexed(b, |i| {
            let xs = x.index_axis(ndarray::Axis(0), i).as_standard_layout().to_owned();
            let xsl = xs.as_slice().expect("standard layout");
            let gs = gout.index_axis(ndarray::Axis(0), i).as_standard_layout().to_owned();
            let gmat = ArrayView2::from_shape((co, oh * ow), gs.as_slice().expect("standard"))
                .expect("contiguous");
            let mut gw = Array2::zeros((co, k));
            let mut buf = vec![F::zero(); k * strip * ow];
            let mut oh0 = 0;
            while oh0 < oh {
                let oh1 = (oh0 + strip).min(oh);
                let n = (oh1 - oh0) * ow;
                im2col_strip(xsl, ci, (h, w), (kh, kw), self.stride, self.padding, ow, (oh0, oh1), &mut buf[..k * n]);
                let cols = ArrayView2::from_shape((k, n), &buf[..k * n]).expect("buffer sized");
                let sub = gmat.slice(s![.., oh0 * ow..oh1 * ow]);
                general_mat_mul(F::one(), &sub, &cols.t(), F::one(), &mut gw);
                oh0 = oh1;
            }
            let gb = self
                .bias
                .as_ref()
                .map(|_| gmat.sum_axis(ndarray::Axis(1)));
            (gw, gb)
        });
        for (gw, gb) in &partials {
            for (d, s) in grads
                .weight
                .as_slice_mut()
                .expect("contiguous")
                .iter_mut()
                .zip(gw.as_slice().expect("contiguous"))
            {
                *d = *d + *s;
            }
            if let (Some(dst), Some(src)) = (grads.bias.as_mut(), gb.as_ref()) {
                *dst += src;
            }
        }
        Ok(gx)
    }
}

impl<F: Scalar> Conv2dGrad<F> {
    pub fn zeros_like(conv: &Conv2d<F>) -> Self {
        Conv2dGrad {
            weight: Array4::zeros(conv.weight.raw_dim()),
            bias: conv.bias.as_ref().map(|b| Array1::zeros(b.raw_dim())),
        }
    }

    pub fn fill_zero(&mut self) {
        self.weight.fill(F::zero());
        if let Some(b) = self.bias.as_mut() {
            b.fill(F::zero());
        }
    }
}

impl<F: Scalar> ParamVisit<F> for Conv2d<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        let shape = self.weight.shape().to_vec();
        f(format!("{prefix}.weight"), &shape, self.weight.as_slice().expect("contiguous"));
        if let Some(b) = &self.bias {
            let shape = b.shape().to_vec();
            f(format!("{prefix}.bias"), &shape, b.as_slice().expect("contiguous"));
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        let shape = self.weight.shape().to_vec();
        f(format!("{prefix}.weight"), &shape, self.weight.as_slice_mut().expect("contiguous"));
        if let Some(b) = &mut self.bias {
            let shape = b.shape().to_vec();
            f(format!("{prefix}.bias"), &shape, b.as_slice_mut().expect("contiguous"));
        }
    }
}

impl<F: Scalar> ParamVisit<F> for Conv2dGrad<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        let shape = self.weight.shape().to_vec();
        f(format!("{prefix}.weight"), &shape, self.weight.as_slice().expect("contiguous"));
        if let Some(b) = &self.bias {
            let shape = b.shape().to_vec();
            f(format!("{prefix}.bias"), &shape, b.as_slice().expect("contiguous"));
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        let shape = self.weight.shape().to_vec();
        f(format!("{prefix}.weight"), &shape, self.weight.as_slice_mut().expect("contiguous"));
        if let Some(b) = &mut self.bias {
            let shape = b.shape().to_vec();
            f(format!("{prefix}.bias"), &shape, b.as_slice_mut().expect("contiguous"));
        }
    }
}

fn strip_rows(k: usize, ow: usize, oh: usize) -> usize {
    (MAX_COL_ELEMS / (k * ow).max(1)).clamp(1, oh.max(1))
}

/// Fills `buf` (row-major `[k, (oh1-oh0)*ow_out]`) with input patches for
/// output rows `oh0..oh1`. Out-of-bounds taps read as zero.
#[allow(clippy::too_many_arguments)]
fn im2col_strip<F: Scalar>(
    xs: &[F],
    ci: usize,
    (h, w): (usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    pad: Padding,
    ow_out: usize,
    (oh0, oh1): (usize, usize),
    buf: &mut [F],
) {
    let n_strip = (oh1 - oh0) * ow_out;
    debug_assert_eq!(buf.len(), ci * kh * kw * n_strip);
    let (pt, pl) = (pad.top as isize, pad.left as isize);
    let mut k_row = 0usize;
    for ic in 0..ci {
        let plane = &xs[ic * h * w..(ic + 1) * h * w];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = &mut buf[k_row * n_strip..(k_row + 1) * n_strip];
                for oh in oh0..oh1 {
                    let ih = (oh * sh) as isize + dy as isize - pt;
                    let seg = &mut row[(oh - oh0) * ow_out..(oh - oh0 + 1) * ow_out];
                    if ih < 0 || ih >= h as isize {
                        seg.fill(F::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    if sw == 1 {
                        let off = dx as isize - pl;
                        let lo = ((-off).max(0) as usize).min(ow_out);
                        let hi = ((w as isize - off).clamp(0, ow_out as isize) as usize).max(lo);
                        seg[..lo].fill(F::zero());
                        if lo < hi {
                            let s0 = (lo as isize + off) as usize;
                            seg[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                        seg[hi..].fill(F::zero());
                    } else {
                        for (ow, cell) in seg.iter_mut().enumerate() {
                            let iw = (ow * sw) as isize + dx as isize - pl;
                            *cell = if iw < 0 || iw >= w as isize {
                                F::zero()
                            } else {
                                src[iw as usize]
                            };
                        }
                    }
                }
                k_row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col_strip`]: scatter-adds column gradients back onto the
/// input gradient plane.
#[allow(clippy::too_many_arguments)]
fn col2im_strip<F: Scalar>(
    buf: &[F],
    gx: &mut [F],
    ci: usize,
    (h, w): (usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    pad: Padding,
    ow_out: usize,
    (oh0, oh1): (usize, usize),
) {
    let n_strip = (oh1 - oh0) * ow_out;
    debug_assert_eq!(buf.len(), ci * kh * kw * n_strip);
    let (pt, pl) = (pad.top as isize, pad.left as isize);
    let mut k_row = 0usize;
    for ic in 0..ci {
        let plane = &mut gx[ic * h * w..(ic + 1) * h * w];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = &buf[k_row * n_strip..(k_row + 1) * n_strip];
                for oh in oh0..oh1 {
                    let ih = (oh * sh) as isize + dy as isize - pt;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let seg = &row[(oh - oh0) * ow_out..(oh - oh0 + 1) * ow_out];
                    let dst = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                    if sw == 1 {
                        let off = dx as isize - pl;
                        let lo = ((-off).max(0) as usize).min(ow_out);
                        let hi = ((w as isize - off).clamp(0, ow_out as isize) as usize).max(lo);
                        if lo < hi {
                            let s0 = (lo as isize + off) as usize;
                            for (d, s) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&seg[lo..hi]) {
                                *d = *d + *s;
                            }
                        }
                    } else {
                        for (ow, s) in seg.iter().enumerate() {
                            let iw = (ow * sw) as isize + dx as isize - pl;
                            if iw >= 0 && iw < w as isize {
                                dst[iw as usize] = dst[iw as usize] + *s;
                            }
                        }
                    }
                }
                k_row += 1;
            }
        }
    }
}
