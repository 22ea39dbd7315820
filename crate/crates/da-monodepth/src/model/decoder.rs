//! Depth and semantics decoders.
//!
//! Both decoders climb the feature pyramid through five up-blocks (conv+ELU,
//! 2x bilinear upsample, skip concat, conv+ELU) with channel widths 256, 128,
//! 64, 32, 16. The first up-block (512 -> 256 at stride 16) is owned by the
//! depth decoder and shared with the semantics decoder: one forward feeds
//! both branches, and each branch backpropagates through it separately so the
//! two parameter-gradient sets can be combined explicitly.
//!
//! Depth heads emit one sigmoid channel (normalized disparity); semantic
//! heads emit raw class logits. Heads sit on the four finest block outputs,
//! giving predictions at 1/8, 1/4, 1/2 and full input resolution (scales 3
//! down to 0).

use ndarray::{concatenate, s, Array4, Axis};
use rand::Rng;

use crate::nn::{
    elu, elu_backward, init::he_conv, resize_bilinear, resize_bilinear_adjoint, sigmoid,
    sigmoid_backward, Conv2d, Conv2dGrad, Padding, ParamVisit,
};
use crate::{Error, Result, Scalar};

/// Decoder channel width per block, deepest first.
pub const DEC_CHANNELS: [usize; 5] = [256, 128, 64, 32, 16];

/// Number of prediction scales; scale 0 is full input resolution.
pub const NUM_SCALES: usize = 4;

/// Per-scale outputs, indexed by scale (0 = finest).
pub type ScaleOutputs<F> = [Array4<F>; NUM_SCALES];

#[derive(Debug, Clone)]
pub struct DecoderBlock<F> {
    pub conv1: Conv2d<F>,
    pub conv2: Conv2d<F>,
}

#[derive(Debug, Clone)]
pub struct DecoderBlockGrad<F> {
    pub conv1: Conv2dGrad<F>,
    pub conv2: Conv2dGrad<F>,
}

#[derive(Debug)]
pub struct DecoderBlockCache<F> {
    x: Array4<F>,
    e1: Array4<F>,
    cat: Array4<F>,
    out: Array4<F>,
    skip_channels: usize,
}

impl<F: Scalar> DecoderBlockCache<F> {
    pub fn output(&self) -> &Array4<F> {
        &self.out
    }
}

impl<F: Scalar> DecoderBlock<F> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cin: usize, cout: usize, skip: usize) -> Self {
        DecoderBlock {
            conv1: he_conv(rng, cin, cout, (3, 3), (1, 1), Padding::sym(1), true),
            conv2: he_conv(rng, cout + skip, cout, (3, 3), (1, 1), Padding::sym(1), true),
        }
    }

    pub fn skip_channels(&self) -> usize {
        self.conv2.in_channels() - self.conv1.out_channels()
    }

    pub fn forward(
        &self,
        x: &Array4<F>,
        skip: Option<&Array4<F>>,
    ) -> Result<(Array4<F>, DecoderBlockCache<F>)> {
        let want_skip = self.skip_channels();
        let e1 = elu(&self.conv1.forward(x)?);
        let (_, _, h, w) = e1.dim();
        let up = resize_bilinear(&e1, (2 * h, 2 * w))?;
        let cat = match (skip, want_skip) {
            (Some(sk), c) if c > 0 => {
                let (_, sc, sh, sw) = sk.dim();
                if sc != c || (sh, sw) != (2 * h, 2 * w) {
                    return Err(Error::shape(
                        "decoder skip feature",
                        format!("[{}, {}, {}]", c, 2 * h, 2 * w),
                        format!("[{sc}, {sh}, {sw}]"),
                    ));
                }
                concatenate(Axis(1), &[up.view(), sk.view()]).expect("matching spatial dims")
            }
            (None, 0) => up,
            _ => {
                return Err(Error::shape(
                    "decoder skip feature",
                    format!("{want_skip} channels"),
                    if skip.is_some() { "unexpected skip" } else { "missing skip" },
                ))
            }
        };
        let out = elu(&self.conv2.forward(&cat)?);
        let cache =
            DecoderBlockCache { x: x.clone(), e1, cat, out: out.clone(), skip_channels: want_skip };
        Ok((out, cache))
    }

    /// Returns gradients for the block input and, when the block consumes a
    /// skip connection, for the skip feature.
    pub fn backward(
        &self,
        cache: &DecoderBlockCache<F>,
        gout: &Array4<F>,
        grads: &mut DecoderBlockGrad<F>,
    ) -> Result<(Array4<F>, Option<Array4<F>>)> {
        let gh2 = elu_backward(&cache.out, gout);
        let gcat = self.conv2.backward(&cache.cat, &gh2, &mut grads.conv2)?;
        let dec_c = self.conv1.out_channels();
        let g_up = gcat.slice(s![.., ..dec_c, .., ..]).to_owned();
        let g_skip =
            (cache.skip_channels > 0).then(|| gcat.slice(s![.., dec_c.., .., ..]).to_owned());
        let (_, _, h, w) = cache.e1.dim();
        let ge1 = resize_bilinear_adjoint(&g_up, (h, w))?;
        let gh1 = elu_backward(&cache.e1, &ge1);
        let gx = self.conv1.backward(&cache.x, &gh1, &mut grads.conv1)?;
        Ok((gx, g_skip))
    }
}

impl<F: Scalar> DecoderBlockGrad<F> {
    pub fn zeros_like(block: &DecoderBlock<F>) -> Self {
        DecoderBlockGrad {
            conv1: Conv2dGrad::zeros_like(&block.conv1),
            conv2: Conv2dGrad::zeros_like(&block.conv2),
        }
    }

    pub fn fill_zero(&mut self) {
        self.conv1.fill_zero();
        self.conv2.fill_zero();
    }

    pub fn add_assign(&mut self, other: &Self) {
        let mut parts: Vec<&[F]> = Vec::new();
        other.visit("", &mut |_, _, data| parts.push(data));
        let mut i = 0;
        self.visit_mut("", &mut |_, _, data| {
            for (d, s) in data.iter_mut().zip(parts[i]) {
                *d = *d + *s;
            }
            i += 1;
        });
    }
}

macro_rules! visit_decoder_block {
    ($self:ident, $prefix:ident, $f:ident, $method:ident) => {{
        $self.conv1.$method(&format!("{}.conv1", $prefix), $f);
        $self.conv2.$method(&format!("{}.conv2", $prefix), $f);
    }};
}

impl<F: Scalar> ParamVisit<F> for DecoderBlock<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_decoder_block!(self, prefix, f, visit);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_decoder_block!(self, prefix, f, visit_mut);
    }
}

impl<F: Scalar> ParamVisit<F> for DecoderBlockGrad<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_decoder_block!(self, prefix, f, visit);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_decoder_block!(self, prefix, f, visit_mut);
    }
}

/// Averages the two parameter-gradient sets the shared first up-block
/// receives from the depth and semantics branches.
pub fn combine_shared_gradients<F: Scalar>(
    g_depth: &DecoderBlockGrad<F>,
    g_seg: &DecoderBlockGrad<F>,
) -> DecoderBlockGrad<F> {
    let mut out = g_depth.clone();
    let half = F::cast(0.5);
    let mut seg_parts: Vec<&[F]> = Vec::new();
    g_seg.visit("", &mut |_, _, data| seg_parts.push(data));
    let mut i = 0;
    out.visit_mut("", &mut |_, _, data| {
        for (d, s) in data.iter_mut().zip(seg_parts[i]) {
            *d = (*d + *s) * half;
        }
        i += 1;
    });
    out
}

/// Encoder skip channels consumed by up-blocks 1..4 (block 5 has no skip),
/// deepest first: encoder levels 4, 3, 2, 1.
const SKIP_CHANNELS: [usize; 4] = [256, 128, 64, 64];

#[derive(Debug, Clone)]
pub struct DepthDecoder<F> {
    /// `blocks[0]` is the shared first up-block.
    pub blocks: [DecoderBlock<F>; 5],
    /// Indexed by scale: `heads[0]` reads the finest block.
    pub heads: [Conv2d<F>; 4],
}

#[derive(Debug, Clone)]
pub struct DepthDecoderGrad<F> {
    pub blocks: [DecoderBlockGrad<F>; 5],
    pub heads: [Conv2dGrad<F>; 4],
}

#[derive(Debug)]
pub struct DepthDecoderCache<F> {
    pub blocks: [DecoderBlockCache<F>; 5],
    /// Sigmoid outputs per scale, needed for head backward.
    disps: ScaleOutputs<F>,
}

fn build_blocks<F: Scalar, R: Rng + ?Sized>(rng: &mut R, from: usize) -> Vec<DecoderBlock<F>> {
    (from..5)
        .map(|i| {
            let cin = if i == 0 { 512 } else { DEC_CHANNELS[i - 1] };
            let skip = if i < 4 { SKIP_CHANNELS[i] } else { 0 };
            DecoderBlock::new(rng, cin, DEC_CHANNELS[i], skip)
        })
        .collect()
}

fn build_heads<F: Scalar, R: Rng + ?Sized>(rng: &mut R, classes: usize) -> [Conv2d<F>; 4] {
    // Scale s reads the block with channel width DEC_CHANNELS[4 - s].
    [0, 1, 2, 3].map(|s| {
        he_conv(rng, DEC_CHANNELS[4 - s], classes, (3, 3), (1, 1), Padding::sym(1), true)
    })
}

impl<F: Scalar> DepthDecoder<F> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let blocks: [DecoderBlock<F>; 5] =
            build_blocks(rng, 0).try_into().expect("five up-blocks");
        DepthDecoder { blocks, heads: build_heads(rng, 1) }
    }

    pub fn shared_block(&self) -> &DecoderBlock<F> {
        &self.blocks[0]
    }

    /// Runs all five up-blocks and the four sigmoid heads. `levels` are the
    /// encoder features, shallow to deep.
    pub fn forward(
        &self,
        levels: &[Array4<F>; 5],
    ) -> Result<(ScaleOutputs<F>, DepthDecoderCache<F>)> {
        let (b1, c1) = self.blocks[0].forward(&levels[4], Some(&levels[3]))?;
        let (b2, c2) = self.blocks[1].forward(&b1, Some(&levels[2]))?;
        let (b3, c3) = self.blocks[2].forward(&b2, Some(&levels[1]))?;
        let (b4, c4) = self.blocks[3].forward(&b3, Some(&levels[0]))?;
        let (b5, c5) = self.blocks[4].forward(&b4, None)?;
        let disps = [
            sigmoid(&self.heads[0].forward(&b5)?),
            sigmoid(&self.heads[1].forward(&b4)?),
            sigmoid(&self.heads[2].forward(&b3)?),
            sigmoid(&self.heads[3].forward(&b2)?),
        ];
        let cache = DepthDecoderCache { blocks: [c1, c2, c3, c4, c5], disps: disps.clone() };
        Ok((disps, cache))
    }

    /// Backward through the heads and up-blocks 2..5. Stops at the shared
    /// block's output so the caller can backpropagate through the shared
    /// block once per branch. Returns that gradient plus the skip gradients
    /// for encoder levels 0..2 (shallow to deep).
    pub fn backward_tail(
        &self,
        cache: &DepthDecoderCache<F>,
        g_disps: &ScaleOutputs<F>,
        grads: &mut DepthDecoderGrad<F>,
    ) -> Result<(Array4<F>, [Array4<F>; 3])> {
        let mut head_grads: Vec<Array4<F>> = Vec::with_capacity(4);
        for s in 0..4 {
            let g_pre = sigmoid_backward(&cache.disps[s], &g_disps[s]);
            let block_out = cache.blocks[4 - s].output();
            head_grads.push(self.heads[s].backward(block_out, &g_pre, &mut grads.heads[s])?);
        }
        let (g_b4, _) = self.blocks[4].backward(&cache.blocks[4], &head_grads[0], &mut grads.blocks[4])?;
        let mut g = g_b4;
        g += &head_grads[1];
        let (g_b3, g_l0) = self.blocks[3].backward(&cache.blocks[3], &g, &mut grads.blocks[3])?;
        let mut g = g_b3;
        g += &head_grads[2];
        let (g_b2, g_l1) = self.blocks[2].backward(&cache.blocks[2], &g, &mut grads.blocks[2])?;
        let mut g = g_b2;
        g += &head_grads[3];
        let (g_b1, g_l2) = self.blocks[1].backward(&cache.blocks[1], &g, &mut grads.blocks[1])?;
        Ok((
            g_b1,
            [
                g_l0.expect("block 4 consumes a skip"),
                g_l1.expect("block 3 consumes a skip"),
                g_l2.expect("block 2 consumes a skip"),
            ],
        ))
    }

    /// Backward through the shared first up-block. Returns gradients for the
    /// latent and for encoder level 3.
    pub fn backward_shared(
        &self,
        cache: &DepthDecoderCache<F>,
        g_shared_out: &Array4<F>,
        grads: &mut DecoderBlockGrad<F>,
    ) -> Result<(Array4<F>, Array4<F>)> {
        let (g_latent, g_l3) =
            self.blocks[0].backward(&cache.blocks[0], g_shared_out, grads)?;
        Ok((g_latent, g_l3.expect("shared block consumes a skip")))
    }
}

impl<F: Scalar> DepthDecoderGrad<F> {
    pub fn zeros_like(dec: &DepthDecoder<F>) -> Self {
        DepthDecoderGrad {
            blocks: dec.blocks.each_ref().map(DecoderBlockGrad::zeros_like),
            heads: dec.heads.each_ref().map(Conv2dGrad::zeros_like),
        }
    }

    pub fn fill_zero(&mut self) {
        for b in self.blocks.iter_mut() {
            b.fill_zero();
        }
        for h in self.heads.iter_mut() {
            h.fill_zero();
        }
    }
}

macro_rules! visit_depth_decoder {
    ($self:ident, $prefix:ident, $f:ident, $method:ident, $iter:ident) => {{
        for (i, b) in $self.blocks.$iter().enumerate() {
            b.$method(&format!("{}.block{}", $prefix, i + 1), $f);
        }
        for (s, h) in $self.heads.$iter().enumerate() {
            h.$method(&format!("{}.head{}", $prefix, s), $f);
        }
    }};
}

impl<F: Scalar> ParamVisit<F> for DepthDecoder<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_depth_decoder!(self, prefix, f, visit, iter);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_depth_decoder!(self, prefix, f, visit_mut, iter_mut);
    }
}

impl<F: Scalar> ParamVisit<F> for DepthDecoderGrad<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_depth_decoder!(self, prefix, f, visit, iter);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_depth_decoder!(self, prefix, f, visit_mut, iter_mut);
    }
}

/// Semantics decoder: private copies of up-blocks 2..5 plus logit heads. The
/// shared first up-block lives in [`DepthDecoder`]; this decoder consumes its
/// output.
#[derive(Debug, Clone)]
pub struct SegDecoder<F> {
    /// Up-blocks 2..5 (stride 8 down to full resolution).
    pub blocks: [DecoderBlock<F>; 4],
    pub heads: [Conv2d<F>; 4],
    pub num_classes: usize,
}

#[derive(Debug, Clone)]
pub struct SegDecoderGrad<F> {
    pub blocks: [DecoderBlockGrad<F>; 4],
    pub heads: [Conv2dGrad<F>; 4],
}

#[derive(Debug)]
pub struct SegDecoderCache<F> {
    blocks: [DecoderBlockCache<F>; 4],
}

impl<F: Scalar> SegDecoder<F> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, num_classes: usize) -> Self {
        let blocks: [DecoderBlock<F>; 4] =
            build_blocks(rng, 1).try_into().expect("four up-blocks");
        SegDecoder { blocks, heads: build_heads(rng, num_classes), num_classes }
    }

    /// `shared_out` is the shared up-block's output (stride 16, 256
    /// channels); `levels` are the encoder features.
    pub fn forward(
        &self,
        shared_out: &Array4<F>,
        levels: &[Array4<F>; 5],
    ) -> Result<(ScaleOutputs<F>, SegDecoderCache<F>)> {
        let (b2, c2) = self.blocks[0].forward(shared_out, Some(&levels[2]))?;
        let (b3, c3) = self.blocks[1].forward(&b2, Some(&levels[1]))?;
        let (b4, c4) = self.blocks[2].forward(&b3, Some(&levels[0]))?;
        let (b5, c5) = self.blocks[3].forward(&b4, None)?;
        let logits = [
            self.heads[0].forward(&b5)?,
            self.heads[1].forward(&b4)?,
            self.heads[2].forward(&b3)?,
            self.heads[3].forward(&b2)?,
        ];
        Ok((logits, SegDecoderCache { blocks: [c2, c3, c4, c5] }))
    }

    /// Backward through heads and private blocks; returns the gradient at the
    /// shared block's output plus skip gradients for encoder levels 0..2.
    pub fn backward_tail(
        &self,
        cache: &SegDecoderCache<F>,
        g_logits: &ScaleOutputs<F>,
        grads: &mut SegDecoderGrad<F>,
    ) -> Result<(Array4<F>, [Array4<F>; 3])> {
        let mut head_grads: Vec<Array4<F>> = Vec::with_capacity(4);
        for s in 0..4 {
            let block_out = cache.blocks[3 - s].output();
            head_grads.push(self.heads[s].backward(block_out, &g_logits[s], &mut grads.heads[s])?);
        }
        let (g_b4, _) = self.blocks[3].backward(&cache.blocks[3], &head_grads[0], &mut grads.blocks[3])?;
        let mut g = g_b4;
        g += &head_grads[1];
        let (g_b3, g_l0) = self.blocks[2].backward(&cache.blocks[2], &g, &mut grads.blocks[2])?;
        let mut g = g_b3;
        g += &head_grads[2];
        let (g_b2, g_l1) = self.blocks[1].backward(&cache.blocks[1], &g, &mut grads.blocks[1])?;
        let mut g = g_b2;
        g += &head_grads[3];
        let (g_shared, g_l2) = self.blocks[0].backward(&cache.blocks[0], &g, &mut grads.blocks[0])?;
        Ok((
            g_shared,
            [
                g_l0.expect("block 4 consumes a skip"),
                g_l1.expect("block 3 consumes a skip"),
                g_l2.expect("block 2 consumes a skip"),
            ],
        ))
    }
}

impl<F: Scalar> SegDecoderGrad<F> {
    pub fn zeros_like(dec: &SegDecoder<F>) -> Self {
        SegDecoderGrad {
            blocks: dec.blocks.each_ref().map(DecoderBlockGrad::zeros_like),
            heads: dec.heads.each_ref().map(Conv2dGrad::zeros_like),
        }
    }

    pub fn fill_zero(&mut self) {
        for b in self.blocks.iter_mut() {
            b.fill_zero();
        }
        for h in self.heads.iter_mut() {
            h.fill_zero();
        }
    }
}

macro_rules! visit_seg_decoder {
    ($self:ident, $prefix:ident, $f:ident, $method:ident, $iter:ident) => {{
        for (i, b) in $self.blocks.$iter().enumerate() {
            b.$method(&format!("{}.block{}", $prefix, i + 2), $f);
        }
        for (s, h) in $self.heads.$iter().enumerate() {
            h.$method(&format!("{}.head{}", $prefix, s), $f);
        }
    }};
}

impl<F: Scalar> ParamVisit<F> for SegDecoder<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_seg_decoder!(self, prefix, f, visit, iter);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_seg_decoder!(self, prefix, f, visit_mut, iter_mut);
    }
}

impl<F: Scalar> ParamVisit<F> for SegDecoderGrad<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_seg_decoder!(self, prefix, f, visit, iter);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_seg_decoder!(self, prefix, f, visit_mut, iter_mut);
    }
}
