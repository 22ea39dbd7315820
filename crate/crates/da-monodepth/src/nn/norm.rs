//! Batch normalization over `[batch, channel, h, w]` tensors.
//!
//! Training mode normalizes with biased batch statistics and updates running
//! statistics with the unbiased variance; evaluation mode normalizes with the
//! running statistics and needs no cache. The backward pass covers training
//! mode, which is the only mode gradients flow through.

use ndarray::{Array1, Array4, Axis};

use crate::nn::ParamVisit;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone)]
pub struct BatchNorm2d<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub momentum: F,
    pub eps: F,
}

/// Gradient holder mirroring the affine parameters of [`BatchNorm2d`].
#[derive(Debug, Clone)]
pub struct BatchNorm2dGrad<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

/// Saved activations from a training-mode forward pass.
#[derive(Debug)]
pub struct BnCache<F> {
    /// Normalized input, before the affine transform.
    pub xhat: Array4<F>,
    /// Per-channel 1 / sqrt(var + eps).
    pub istd: Array1<F>,
}

impl<F: Scalar> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: F::cast(0.1),
            eps: F::cast(1e-5),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Array4<F>) -> Result<usize> {
        let (b, c, h, w) = x.dim();
        if c != self.channels() {
            return Err(Error::shape("batchnorm channels", self.channels(), c));
        }
        let n = b * h * w;
        if n < 2 {
            return Err(Error::shape("batchnorm elements per channel", "at least 2", n));
        }
        Ok(n)
    }

    /// Training-mode forward: normalize with batch statistics, update running
    /// statistics in place.
    pub fn forward_train(&mut self, x: &Array4<F>) -> Result<(Array4<F>, BnCache<F>)> {
        let n = self.check(x)?;
        let nf = F::from_usize(n);
        let c = self.channels();

        let mut xhat = x.clone();
        let mut istd = Array1::zeros(c);
        for ch in 0..c {
            let mut plane = xhat.index_axis_mut(Axis(1), ch);
            let mean = plane.sum() / nf;
            plane.mapv_inplace(|v| v - mean);
            let var = plane.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b) / nf;
            let is = F::one() / (var + self.eps).sqrt();
            plane.mapv_inplace(|v| v * is);
            istd[ch] = is;

            let unbiased = var * nf / F::from_usize(n - 1);
            self.running_mean[ch] =
                (F::one() - self.momentum) * self.running_mean[ch] + self.momentum * mean;
            self.running_var[ch] =
                (F::one() - self.momentum) * self.running_var[ch] + self.momentum * unbiased;
        }

        let mut y = xhat.clone();
        for ch in 0..c {
            let (g, b) = (self.gamma[ch], self.beta[ch]);
            y.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v * g + b);
        }
        Ok((y, BnCache { xhat, istd }))
    }

    /// Evaluation-mode forward using running statistics.
    pub fn forward_eval(&self, x: &Array4<F>) -> Result<Array4<F>> {
        self.check(x)?;
        let mut y = x.clone();
        for ch in 0..self.channels() {
            let is = F::one() / (self.running_var[ch] + self.eps).sqrt();
            let scale = self.gamma[ch] * is;
            let shift = self.beta[ch] - self.running_mean[ch] * scale;
            y.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v * scale + shift);
        }
        Ok(y)
    }

    /// Training-mode backward. Accumulates affine-parameter gradients into
    /// `grads` and returns the input gradient.
    pub fn backward(
        &self,
        cache: &BnCache<F>,
        gout: &Array4<F>,
        grads: &mut BatchNorm2dGrad<F>,
    ) -> Result<Array4<F>> {
        if gout.dim() != cache.xhat.dim() {
            return Err(Error::shape(
                "batchnorm output gradient",
                format!("{:?}", cache.xhat.dim()),
                format!("{:?}", gout.dim()),
            ));
        }
        let (b, c, h, w) = gout.dim();
        let nf = F::from_usize(b * h * w);
        let mut gx = Array4::zeros(gout.raw_dim());
        for ch in 0..c {
            let g = gout.index_axis(Axis(1), ch);
            let xh = cache.xhat.index_axis(Axis(1), ch);
            let mut sum_g = F::zero();
            let mut sum_gx = F::zero();
            for (&gv, &xv) in g.iter().zip(xh.iter()) {
                sum_g = sum_g + gv;
                sum_gx = sum_gx + gv * xv;
            }
            grads.gamma[ch] = grads.gamma[ch] + sum_gx;
            grads.beta[ch] = grads.beta[ch] + sum_g;

            let k = self.gamma[ch] * cache.istd[ch] / nf;
            let mut out = gx.index_axis_mut(Axis(1), ch);
            for ((o, &gv), &xv) in out.iter_mut().zip(g.iter()).zip(xh.iter()) {
                *o = k * (nf * gv - sum_g - xv * sum_gx);
            }
        }
        Ok(gx)
    }
}

impl<F: Scalar> BatchNorm2dGrad<F> {
    pub fn zeros_like(bn: &BatchNorm2d<F>) -> Self {
        BatchNorm2dGrad {
            gamma: Array1::zeros(bn.gamma.raw_dim()),
            beta: Array1::zeros(bn.beta.raw_dim()),
        }
    }

    pub fn fill_zero(&mut self) {
        self.gamma.fill(F::zero());
        self.beta.fill(F::zero());
    }
}

impl<F: Scalar> ParamVisit<F> for BatchNorm2d<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        let shape = vec![self.gamma.len()];
        f(format!("{prefix}.weight"), &shape, self.gamma.as_slice().expect("contiguous"));
        f(format!("{prefix}.bias"), &shape, self.beta.as_slice().expect("contiguous"));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        let shape = vec![self.gamma.len()];
        f(format!("{prefix}.weight"), &shape, self.gamma.as_slice_mut().expect("contiguous"));
        f(format!("{prefix}.bias"), &shape, self.beta.as_slice_mut().expect("contiguous"));
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        let shape = vec![self.gamma.len()];
        f(
            format!("{prefix}.running_mean"),
            &shape,
            self.running_mean.as_slice().expect("contiguous"),
        );
        f(
            format!("{prefix}.running_var"),
            &shape,
            self.running_var.as_slice().expect("contiguous"),
        );
    }

    fn visit_buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &[usize], &'a mut [F]),
    ) {
        let shape = vec![self.gamma.len()];
        f(
            format!("{prefix}.running_mean"),
            &shape,
            self.running_mean.as_slice_mut().expect("contiguous"),
        );
        f(
            format!("{prefix}.running_var"),
            &shape,
            self.running_var.as_slice_mut().expect("contiguous"),
        );
    }
}

impl<F: Scalar> ParamVisit<F> for BatchNorm2dGrad<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        let shape = vec![self.gamma.len()];
        f(format!("{prefix}.weight"), &shape, self.gamma.as_slice().expect("contiguous"));
        f(format!("{prefix}.bias"), &shape, self.beta.as_slice().expect("contiguous"));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        let shape = vec![self.gamma.len()];
        f(format!("{prefix}.weight"), &shape, self.gamma.as_slice_mut().expect("contiguous"));
        f(format!("{prefix}.bias"), &shape, self.beta.as_slice_mut().expect("contiguous"));
    }
}
