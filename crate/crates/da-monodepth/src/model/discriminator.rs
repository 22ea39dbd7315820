//! Patch-level domain classifier over the stride-32 latent, plus the
//! gradient-reversal coupling that turns its training signal into an
//! adversarial one for the encoder.
//!
//! Four 4x4 convolutions (512 -> 256 -> 128 -> 64 -> 1) with leaky-ReLU 0.2
//! between them. The first halves the spatial extent (stride 2, pad 1); the
//! rest keep it (stride 1, asymmetric same padding). No normalization
//! anywhere, so per-sample outputs are independent of batch composition. The
//! output is a map of per-patch domain logits, not a single scalar.

use ndarray::Array4;
use rand::Rng;

use crate::nn::{init::he_conv, leaky_relu, leaky_relu_backward, Conv2d, Conv2dGrad, Padding, ParamVisit};
use crate::{Result, Scalar};

const LEAKY_SLOPE: f64 = 0.2;

/// Channel plan through the classifier.
const CHANNELS: [usize; 5] = [512, 256, 128, 64, 1];

#[derive(Debug, Clone)]
pub struct Discriminator<F> {
    pub convs: [Conv2d<F>; 4],
}

#[derive(Debug, Clone)]
pub struct DiscriminatorGrad<F> {
    pub convs: [Conv2dGrad<F>; 4],
}

#[derive(Debug)]
pub struct DiscriminatorCache<F> {
    /// Input to conv i; `acts[0]` is the latent, the rest are leaky outputs.
    acts: [Array4<F>; 4],
}

impl<F: Scalar> Discriminator<F> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let convs = [0, 1, 2, 3].map(|i| {
            let (stride, pad) =
                if i == 0 { ((2, 2), Padding::sym(1)) } else { ((1, 1), Padding::same_even(4)) };
            he_conv(rng, CHANNELS[i], CHANNELS[i + 1], (4, 4), stride, pad, true)
        });
        Discriminator { convs }
    }

    /// Maps a `[b, 512, h, w]` latent to `[b, 1, (h-2)/2+1, (w-2)/2+1]`
    /// patch logits. Needs h, w >= 2.
    pub fn forward(&self, z: &Array4<F>) -> Result<(Array4<F>, DiscriminatorCache<F>)> {
        let slope = F::cast(LEAKY_SLOPE);
        let a1 = leaky_relu(&self.convs[0].forward(z)?, slope);
        let a2 = leaky_relu(&self.convs[1].forward(&a1)?, slope);
        let a3 = leaky_relu(&self.convs[2].forward(&a2)?, slope);
        let logits = self.convs[3].forward(&a3)?;
        Ok((logits, DiscriminatorCache { acts: [z.clone(), a1, a2, a3] }))
    }

    /// Returns the gradient with respect to the latent. The caller decides
    /// what to do with it (reverse it for the encoder, or drop it).
    pub fn backward(
        &self,
        cache: &DiscriminatorCache<F>,
        gout: &Array4<F>,
        grads: &mut DiscriminatorGrad<F>,
    ) -> Result<Array4<F>> {
        let slope = F::cast(LEAKY_SLOPE);
        let mut g = self.convs[3].backward(&cache.acts[3], gout, &mut grads.convs[3])?;
        for i in (0..3).rev() {
            let ga = leaky_relu_backward(&cache.acts[i + 1], &g, slope);
            g = self.convs[i].backward(&cache.acts[i], &ga, &mut grads.convs[i])?;
        }
        Ok(g)
    }
}

impl<F: Scalar> DiscriminatorGrad<F> {
    pub fn zeros_like(disc: &Discriminator<F>) -> Self {
        DiscriminatorGrad { convs: disc.convs.each_ref().map(Conv2dGrad::zeros_like) }
    }

    pub fn fill_zero(&mut self) {
        for c in self.convs.iter_mut() {
            c.fill_zero();
        }
    }
}

macro_rules! visit_disc {
    ($self:ident, $prefix:ident, $f:ident, $method:ident, $iter:ident) => {{
        for (i, c) in $self.convs.$iter().enumerate() {
            c.$method(&format!("{}.conv{}", $prefix, i + 1), $f);
        }
    }};
}

impl<F: Scalar> ParamVisit<F> for Discriminator<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_disc!(self, prefix, f, visit, iter);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_disc!(self, prefix, f, visit_mut, iter_mut);
    }
}

impl<F: Scalar> ParamVisit<F> for DiscriminatorGrad<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_disc!(self, prefix, f, visit, iter);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_disc!(self, prefix, f, visit_mut, iter_mut);
    }
}

/// Gradient reversal, forward half: the identity.
pub fn grl_forward<F: Scalar>(z: &Array4<F>) -> Array4<F> {
    z.clone()
}

/// Gradient reversal, backward half: scales the incoming gradient by
/// exactly `-lambda`, elementwise. No other transformation is applied.
pub fn grl_backward<F: Scalar>(gout: &Array4<F>, lambda: F) -> Array4<F> {
    gout.mapv(|g| -lambda * g)
}
