//! ResNet-18 feature encoder.
//!
//! Produces five feature levels at strides 2, 4, 8, 16 and 32 with channel
//! widths 64, 64, 128, 256, 512. The stride-32 level is the latent
//! representation consumed by both decode paths and the domain classifier.
//! Convolutions carry no bias (the following batch norm absorbs it).

use ndarray::Array4;
use rand::Rng;

use crate::nn::{
    init::he_conv, max_pool2d_3x3s2, max_pool2d_3x3s2_backward, relu, relu_backward, BatchNorm2d,
    BatchNorm2dGrad, BnCache, Conv2d, Conv2dGrad, Padding, ParamVisit, PoolCache,
};
use crate::{Error, Result, Scalar};

/// Residual block: two 3x3 convs with batch norm, ReLU between and after,
/// plus a 1x1 projection on the skip when shape changes.
#[derive(Debug, Clone)]
pub struct BasicBlock<F> {
    pub conv1: Conv2d<F>,
    pub bn1: BatchNorm2d<F>,
    pub conv2: Conv2d<F>,
    pub bn2: BatchNorm2d<F>,
    pub down: Option<(Conv2d<F>, BatchNorm2d<F>)>,
}

#[derive(Debug, Clone)]
pub struct BasicBlockGrad<F> {
    pub conv1: Conv2dGrad<F>,
    pub bn1: BatchNorm2dGrad<F>,
    pub conv2: Conv2dGrad<F>,
    pub bn2: BatchNorm2dGrad<F>,
    pub down: Option<(Conv2dGrad<F>, BatchNorm2dGrad<F>)>,
}

#[derive(Debug)]
pub struct BasicBlockCache<F> {
    x: Array4<F>,
    bn1: BnCache<F>,
    r1: Array4<F>,
    bn2: BnCache<F>,
    down_bn: Option<BnCache<F>>,
    out: Array4<F>,
}

impl<F: Scalar> BasicBlock<F> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cin: usize, cout: usize, stride: usize) -> Self {
        let down = (stride != 1 || cin != cout).then(|| {
            (
                he_conv(rng, cin, cout, (1, 1), (stride, stride), Padding::none(), false),
                BatchNorm2d::new(cout),
            )
        });
        BasicBlock {
            conv1: he_conv(rng, cin, cout, (3, 3), (stride, stride), Padding::sym(1), false),
            bn1: BatchNorm2d::new(cout),
            conv2: he_conv(rng, cout, cout, (3, 3), (1, 1), Padding::sym(1), false),
            bn2: BatchNorm2d::new(cout),
            down,
        }
    }

    pub fn forward_train(&mut self, x: &Array4<F>) -> Result<(Array4<F>, BasicBlockCache<F>)> {
        let h1 = self.conv1.forward(x)?;
        let (y1, bn1c) = self.bn1.forward_train(&h1)?;
        let r1 = relu(&y1);
        let h2 = self.conv2.forward(&r1)?;
        let (y2, bn2c) = self.bn2.forward_train(&h2)?;
        let (id, down_bnc) = match &mut self.down {
            Some((conv, bn)) => {
                let hd = conv.forward(x)?;
                let (yd, c) = bn.forward_train(&hd)?;
                (yd, Some(c))
            }
            None => (x.clone(), None),
        };
        let mut s = y2;
        s += &id;
        let out = relu(&s);
        let cache = BasicBlockCache {
            x: x.clone(),
            bn1: bn1c,
            r1,
            bn2: bn2c,
            down_bn: down_bnc,
            out: out.clone(),
        };
        Ok((out, cache))
    }

    pub fn forward_eval(&self, x: &Array4<F>) -> Result<Array4<F>> {
        let y1 = self.bn1.forward_eval(&self.conv1.forward(x)?)?;
        let r1 = relu(&y1);
        let y2 = self.bn2.forward_eval(&self.conv2.forward(&r1)?)?;
        let id = match &self.down {
            Some((conv, bn)) => bn.forward_eval(&conv.forward(x)?)?,
            None => x.clone(),
        };
        let mut s = y2;
        s += &id;
        Ok(relu(&s))
    }

    pub fn backward(
        &self,
        cache: &BasicBlockCache<F>,
        gout: &Array4<F>,
        grads: &mut BasicBlockGrad<F>,
    ) -> Result<Array4<F>> {
        let gs = relu_backward(&cache.out, gout);
        let gh2 = self.bn2.backward(&cache.bn2, &gs, &mut grads.bn2)?;
        let gr1 = self.conv2.backward(&cache.r1, &gh2, &mut grads.conv2)?;
        let gy1 = relu_backward(&cache.r1, &gr1);
        let gh1 = self.bn1.backward(&cache.bn1, &gy1, &mut grads.bn1)?;
        let mut gx = self.conv1.backward(&cache.x, &gh1, &mut grads.conv1)?;
        match (&self.down, grads.down.as_mut(), cache.down_bn.as_ref()) {
            (Some((conv, bn)), Some((gconv, gbn)), Some(bnc)) => {
                let ghd = bn.backward(bnc, &gs, gbn)?;
                gx += &conv.backward(&cache.x, &ghd, gconv)?;
            }
            (None, None, None) => gx += &gs,
            _ => return Err(Error::Config("residual block gradient holder mismatch".into())),
        }
        Ok(gx)
    }
}

impl<F: Scalar> BasicBlockGrad<F> {
    pub fn zeros_like(block: &BasicBlock<F>) -> Self {
        BasicBlockGrad {
            conv1: Conv2dGrad::zeros_like(&block.conv1),
            bn1: BatchNorm2dGrad::zeros_like(&block.bn1),
            conv2: Conv2dGrad::zeros_like(&block.conv2),
            bn2: BatchNorm2dGrad::zeros_like(&block.bn2),
            down: block
                .down
                .as_ref()
                .map(|(c, b)| (Conv2dGrad::zeros_like(c), BatchNorm2dGrad::zeros_like(b))),
        }
    }

    pub fn fill_zero(&mut self) {
        self.conv1.fill_zero();
        self.bn1.fill_zero();
        self.conv2.fill_zero();
        self.bn2.fill_zero();
        if let Some((c, b)) = self.down.as_mut() {
            c.fill_zero();
            b.fill_zero();
        }
    }
}

macro_rules! visit_block {
    ($self:ident, $prefix:ident, $f:ident, $method:ident) => {{
        $self.conv1.$method(&format!("{}.conv1", $prefix), $f);
        $self.bn1.$method(&format!("{}.bn1", $prefix), $f);
        $self.conv2.$method(&format!("{}.conv2", $prefix), $f);
        $self.bn2.$method(&format!("{}.bn2", $prefix), $f);
        if let Some((c, b)) = &$self.down {
            c.$method(&format!("{}.down.conv", $prefix), $f);
            b.$method(&format!("{}.down.bn", $prefix), $f);
        }
    }};
    (mut $self:ident, $prefix:ident, $f:ident, $method:ident) => {{
        $self.conv1.$method(&format!("{}.conv1", $prefix), $f);
        $self.bn1.$method(&format!("{}.bn1", $prefix), $f);
        $self.conv2.$method(&format!("{}.conv2", $prefix), $f);
        $self.bn2.$method(&format!("{}.bn2", $prefix), $f);
        if let Some((c, b)) = &mut $self.down {
            c.$method(&format!("{}.down.conv", $prefix), $f);
            b.$method(&format!("{}.down.bn", $prefix), $f);
        }
    }};
}

impl<F: Scalar> ParamVisit<F> for BasicBlock<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_block!(self, prefix, f, visit);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_block!(mut self, prefix, f, visit_mut);
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_block!(self, prefix, f, visit_buffers);
    }

    fn visit_buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &[usize], &'a mut [F]),
    ) {
        visit_block!(mut self, prefix, f, visit_buffers_mut);
    }
}

impl<F: Scalar> ParamVisit<F> for BasicBlockGrad<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_block!(self, prefix, f, visit);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_block!(mut self, prefix, f, visit_mut);
    }
}

/// Channel plan per residual stage: (in, out, first-block stride).
const STAGES: [(usize, usize, usize); 4] = [(64, 64, 1), (64, 128, 2), (128, 256, 2), (256, 512, 2)];

/// Number of image channels the encoder expects.
pub const IN_CHANNELS: usize = 3;

/// Feature channel width per level, shallow to deep.
pub const LEVEL_CHANNELS: [usize; 5] = [64, 64, 128, 256, 512];

#[derive(Debug, Clone)]
pub struct Encoder<F> {
    pub conv1: Conv2d<F>,
    pub bn1: BatchNorm2d<F>,
    pub layers: [[BasicBlock<F>; 2]; 4],
}

/// Feature pyramid; `levels[4]` is the latent representation at stride 32.
#[derive(Debug, Clone)]
pub struct EncoderFeatures<F> {
    pub levels: [Array4<F>; 5],
}

impl<F: Scalar> EncoderFeatures<F> {
    pub fn latent(&self) -> &Array4<F> {
        &self.levels[4]
    }

    /// Zero-filled gradient holders matching each level's shape.
    pub fn zero_grads(&self) -> [Array4<F>; 5] {
        self.levels.each_ref().map(|l| Array4::zeros(l.raw_dim()))
    }
}

#[derive(Debug)]
pub struct EncoderCache<F> {
    x: Array4<F>,
    bn1: BnCache<F>,
    r1: Array4<F>,
    pool: PoolCache,
    blocks: Vec<BasicBlockCache<F>>,
}

#[derive(Debug, Clone)]
pub struct EncoderGrad<F> {
    pub conv1: Conv2dGrad<F>,
    pub bn1: BatchNorm2dGrad<F>,
    pub layers: [[BasicBlockGrad<F>; 2]; 4],
}

impl<F: Scalar> Encoder<F> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let conv1 = he_conv(rng, IN_CHANNELS, 64, (7, 7), (2, 2), Padding::sym(3), false);
        let bn1 = BatchNorm2d::new(64);
        let layers = STAGES.map(|(cin, cout, stride)| {
            [BasicBlock::new(rng, cin, cout, stride), BasicBlock::new(rng, cout, cout, 1)]
        });
        Encoder { conv1, bn1, layers }
    }

    /// Input images must be `[b, 3, h, w]` with h and w multiples of 32 and
    /// at least 64, so that all five levels exist and the latent keeps a
    /// spatial extent the domain classifier can downsample.
    fn check_input(&self, x: &Array4<F>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != IN_CHANNELS {
            return Err(Error::shape("encoder input channels", IN_CHANNELS, c));
        }
        if h % 32 != 0 || w % 32 != 0 || h < 64 || w < 64 {
            return Err(Error::shape(
                "encoder input size",
                "multiples of 32, at least 64x64",
                format!("{h}x{w}"),
            ));
        }
        Ok(())
    }

    pub fn forward_train(&mut self, x: &Array4<F>) -> Result<(EncoderFeatures<F>, EncoderCache<F>)> {
        self.check_input(x)?;
        let h1 = self.conv1.forward(x)?;
        let (y1, bn1c) = self.bn1.forward_train(&h1)?;
        let r1 = relu(&y1);
        let (pooled, poolc) = max_pool2d_3x3s2(&r1)?;

        let mut blocks = Vec::with_capacity(8);
        let mut cur = pooled;
        let mut deep_levels = Vec::with_capacity(4);
        for layer in self.layers.iter_mut() {
            for block in layer.iter_mut() {
                let (out, cache) = block.forward_train(&cur)?;
                blocks.push(cache);
                cur = out;
            }
            deep_levels.push(cur.clone());
        }
        let [l1, l2, l3, l4]: [Array4<F>; 4] =
            deep_levels.try_into().expect("four residual stages");
        let features = EncoderFeatures { levels: [r1.clone(), l1, l2, l3, l4] };
        let cache = EncoderCache { x: x.clone(), bn1: bn1c, r1, pool: poolc, blocks };
        Ok((features, cache))
    }

    pub fn forward_eval(&self, x: &Array4<F>) -> Result<EncoderFeatures<F>> {
        self.check_input(x)?;
        let y1 = self.bn1.forward_eval(&self.conv1.forward(x)?)?;
        let r1 = relu(&y1);
        let (pooled, _) = max_pool2d_3x3s2(&r1)?;
        let mut cur = pooled;
        let mut deep_levels = Vec::with_capacity(4);
        for layer in self.layers.iter() {
            for block in layer.iter() {
                cur = block.forward_eval(&cur)?;
            }
            deep_levels.push(cur.clone());
        }
        let [l1, l2, l3, l4]: [Array4<F>; 4] =
            deep_levels.try_into().expect("four residual stages");
        Ok(EncoderFeatures { levels: [r1, l1, l2, l3, l4] })
    }

    /// Backpropagates gradients injected at each feature level. The gradient
    /// with respect to the input image is discarded; nothing upstream of the
    /// encoder trains.
    pub fn backward(
        &self,
        cache: &EncoderCache<F>,
        g_levels: &[Array4<F>; 5],
        grads: &mut EncoderGrad<F>,
    ) -> Result<()> {
        let mut g = g_levels[4].clone();
        for l in (0..4).rev() {
            for i in (0..2).rev() {
                g = self.layers[l][i].backward(&cache.blocks[l * 2 + i], &g, &mut grads.layers[l][i])?;
            }
            if l > 0 {
                g += &g_levels[l];
            }
        }
        let mut g0 = max_pool2d_3x3s2_backward(&cache.pool, &g)?;
        g0 += &g_levels[0];
        let gy1 = relu_backward(&cache.r1, &g0);
        let gh1 = self.bn1.backward(&cache.bn1, &gy1, &mut grads.bn1)?;
        self.conv1.backward(&cache.x, &gh1, &mut grads.conv1)?;
        Ok(())
    }
}

impl<F: Scalar> EncoderGrad<F> {
    pub fn zeros_like(enc: &Encoder<F>) -> Self {
        EncoderGrad {
            conv1: Conv2dGrad::zeros_like(&enc.conv1),
            bn1: BatchNorm2dGrad::zeros_like(&enc.bn1),
            layers: enc.layers.each_ref().map(|l| l.each_ref().map(BasicBlockGrad::zeros_like)),
        }
    }

    pub fn fill_zero(&mut self) {
        self.conv1.fill_zero();
        self.bn1.fill_zero();
        for layer in self.layers.iter_mut() {
            for block in layer.iter_mut() {
                block.fill_zero();
            }
        }
    }
}

macro_rules! visit_encoder {
    ($self:ident, $prefix:ident, $f:ident, $method:ident, $iter:ident) => {{
        $self.conv1.$method(&format!("{}.conv1", $prefix), $f);
        $self.bn1.$method(&format!("{}.bn1", $prefix), $f);
        for (l, layer) in $self.layers.$iter().enumerate() {
            for (i, block) in layer.$iter().enumerate() {
                block.$method(&format!("{}.layer{}.{}", $prefix, l + 1, i), $f);
            }
        }
    }};
}

impl<F: Scalar> ParamVisit<F> for Encoder<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_encoder!(self, prefix, f, visit, iter);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_encoder!(self, prefix, f, visit_mut, iter_mut);
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_encoder!(self, prefix, f, visit_buffers, iter);
    }

    fn visit_buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &[usize], &'a mut [F]),
    ) {
        visit_encoder!(self, prefix, f, visit_buffers_mut, iter_mut);
    }
}

impl<F: Scalar> ParamVisit<F> for EncoderGrad<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_encoder!(self, prefix, f, visit, iter);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_encoder!(self, prefix, f, visit_mut, iter_mut);
    }
}
