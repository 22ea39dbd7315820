//! Model assembly: encoder, decode branches, domain classifier.
//!
//! A [`ModelBundle`] holds whichever components the chosen variant needs. The
//! depth branch is always present; the semantics branch and the domain
//! classifier are optional so ablations can drop them. All components are
//! created from one RNG in a fixed order, so a seed fully determines the
//! initial parameters of every variant.

pub mod decoder;
pub mod discriminator;
pub mod encoder;

pub use decoder::{
    combine_shared_gradients, DecoderBlock, DecoderBlockCache, DecoderBlockGrad, DepthDecoder,
    DepthDecoderCache, DepthDecoderGrad, ScaleOutputs, SegDecoder, SegDecoderCache, SegDecoderGrad,
    NUM_SCALES,
};
pub use discriminator::{grl_backward, grl_forward, Discriminator, DiscriminatorCache, DiscriminatorGrad};
pub use encoder::{Encoder, EncoderCache, EncoderFeatures, EncoderGrad};

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{param_count, ParamVisit};
use crate::{Result, Scalar};

/// Which auxiliary branches the model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Depth branch only.
    Baseline,
    /// Depth plus semantics branch.
    WithSemantics,
    /// Depth, semantics, and adversarial domain alignment.
    Full,
}

impl Variant {
    pub fn has_semantics(self) -> bool {
        !matches!(self, Variant::Baseline)
    }

    pub fn has_domain_classifier(self) -> bool {
        matches!(self, Variant::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::WithSemantics => "with-semantics",
            Variant::Full => "full",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "with-semantics" | "semantics" => Ok(Variant::WithSemantics),
            "full" => Ok(Variant::Full),
            other => Err(crate::Error::Config(format!(
                "unknown variant '{other}' (expected baseline, with-semantics, or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Semantic classes, including background classes but not the ignore
    /// label.
    pub num_classes: usize,
}

/// Trainable-parameter tally per component. The shared first up-block is
/// counted once, under the depth decoder that owns it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub encoder: usize,
    pub depth: usize,
    pub semantics: usize,
    pub domain: usize,
    pub total: usize,
}

#[derive(Debug, Clone)]
pub struct ModelBundle<F> {
    pub encoder: Encoder<F>,
    pub depth: DepthDecoder<F>,
    pub seg: Option<SegDecoder<F>>,
    pub disc: Option<Discriminator<F>>,
    pub config: ModelConfig,
}

/// Gradient holders for every trainable component of a bundle.
#[derive(Debug, Clone)]
pub struct ModelGrads<F> {
    pub encoder: EncoderGrad<F>,
    pub depth: DepthDecoderGrad<F>,
    pub seg: Option<SegDecoderGrad<F>>,
    pub disc: Option<DiscriminatorGrad<F>>,
}

impl<F: Scalar> ModelBundle<F> {
    /// Builds all components from one seed. Construction order (encoder,
    /// depth, semantics, classifier) is fixed; variants that omit a component
    /// simply skip its draws.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.num_classes < 2 {
            return Err(crate::Error::Config(format!(
                "need at least 2 semantic classes, got {}",
                config.num_classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(&mut rng);
        let depth = DepthDecoder::new(&mut rng);
        let seg = config
            .variant
            .has_semantics()
            .then(|| SegDecoder::new(&mut rng, config.num_classes));
        let disc = config.variant.has_domain_classifier().then(|| Discriminator::new(&mut rng));
        Ok(ModelBundle { encoder, depth, seg, disc, config })
    }

    pub fn zero_grads(&self) -> ModelGrads<F> {
        ModelGrads {
            encoder: EncoderGrad::zeros_like(&self.encoder),
            depth: DepthDecoderGrad::zeros_like(&self.depth),
            seg: self.seg.as_ref().map(SegDecoderGrad::zeros_like),
            disc: self.disc.as_ref().map(DiscriminatorGrad::zeros_like),
        }
    }

    /// Inference-mode feature extraction (running-stat normalization).
    pub fn encode(&self, images: &Array4<F>) -> Result<EncoderFeatures<F>> {
        self.encoder.forward_eval(images)
    }

    /// Normalized disparity maps at the four scales, finest first.
    pub fn decode_depth(&self, features: &EncoderFeatures<F>) -> Result<ScaleOutputs<F>> {
        let (disps, _) = self.depth.forward(&features.levels)?;
        Ok(disps)
    }

    /// Class-logit maps at the four scales, finest first.
    pub fn decode_semantics(&self, features: &EncoderFeatures<F>) -> Result<ScaleOutputs<F>> {
        let seg = self.seg.as_ref().ok_or_else(|| {
            crate::Error::Config("this model variant has no semantics branch".into())
        })?;
        let (_, shared_cache) =
            self.depth.blocks[0].forward(&features.levels[4], Some(&features.levels[3]))?;
        let (logits, _) = seg.forward(shared_cache.output(), &features.levels)?;
        Ok(logits)
    }

    /// Per-patch domain logits for a latent tensor.
    pub fn discriminate(&self, latent: &Array4<F>) -> Result<Array4<F>> {
        let disc = self.disc.as_ref().ok_or_else(|| {
            crate::Error::Config("this model variant has no domain classifier".into())
        })?;
        let (logits, _) = disc.forward(latent)?;
        Ok(logits)
    }

    pub fn count_parameters(&self) -> ParamCounts {
        let encoder = param_count(&self.encoder);
        let depth = param_count(&self.depth);
        let semantics = self.seg.as_ref().map_or(0, param_count);
        let domain = self.disc.as_ref().map_or(0, param_count);
        ParamCounts { encoder, depth, semantics, domain, total: encoder + depth + semantics + domain }
    }
}

macro_rules! visit_bundle {
    ($self:ident, $prefix:ident, $f:ident, $method:ident, $as_ref:ident) => {{
        let p = if $prefix.is_empty() { String::new() } else { format!("{}.", $prefix) };
        $self.encoder.$method(&format!("{p}encoder"), $f);
        $self.depth.$method(&format!("{p}depth"), $f);
        if let Some(seg) = $self.seg.$as_ref() {
            seg.$method(&format!("{p}semantics"), $f);
        }
        if let Some(disc) = $self.disc.$as_ref() {
            disc.$method(&format!("{p}domain"), $f);
        }
    }};
}

impl<F: Scalar> ParamVisit<F> for ModelBundle<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_bundle!(self, prefix, f, visit, as_ref);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_bundle!(self, prefix, f, visit_mut, as_mut);
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        let p = if prefix.is_empty() { String::new() } else { format!("{prefix}.") };
        self.encoder.visit_buffers(&format!("{p}encoder"), f);
    }

    fn visit_buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &[usize], &'a mut [F]),
    ) {
        let p = if prefix.is_empty() { String::new() } else { format!("{prefix}.") };
        self.encoder.visit_buffers_mut(&format!("{p}encoder"), f);
    }
}

impl<F: Scalar> ParamVisit<F> for ModelGrads<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [F])) {
        visit_bundle!(self, prefix, f, visit, as_ref);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a mut [F])) {
        visit_bundle!(self, prefix, f, visit_mut, as_mut);
    }
}

impl<F: Scalar> ModelGrads<F> {
    pub fn fill_zero(&mut self) {
        self.encoder.fill_zero();
        self.depth.fill_zero();
        if let Some(seg) = self.seg.as_mut() {
            seg.fill_zero();
        }
        if let Some(disc) = self.disc.as_mut() {
            disc.fill_zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(variant: Variant, k: usize) -> ModelConfig {
        ModelConfig { variant, num_classes: k }
    }

    #[test]
    fn full_variant_parameter_budget() {
        let model: ModelBundle<f32> = ModelBundle::new(cfg(Variant::Full, 14), 0).unwrap();
        let counts = model.count_parameters();
        assert_eq!(counts.encoder, 11_176_512);
        assert_eq!(counts.depth, 3_152_724);
        assert_eq!(counts.semantics, 821_048);
        assert_eq!(counts.domain, 2_753_985);
        assert_eq!(counts.total, 17_904_269);
    }

    #[test]
    fn baseline_is_strictly_smaller() {
        let full: ModelBundle<f32> = ModelBundle::new(cfg(Variant::Full, 14), 0).unwrap();
        let base: ModelBundle<f32> = ModelBundle::new(cfg(Variant::Baseline, 14), 0).unwrap();
        assert!(base.count_parameters().total < full.count_parameters().total);
        assert_eq!(base.count_parameters().semantics, 0);
        assert_eq!(base.count_parameters().domain, 0);
    }

    #[test]
    fn same_seed_same_shared_weights_across_variants() {
        // Encoder and depth draws precede the optional components, so every
        // variant starts from identical depth-path weights for a given seed.
        let full: ModelBundle<f32> = ModelBundle::new(cfg(Variant::Full, 5), 7).unwrap();
        let base: ModelBundle<f32> = ModelBundle::new(cfg(Variant::Baseline, 5), 7).unwrap();
        assert_eq!(full.encoder.conv1.weight, base.encoder.conv1.weight);
        assert_eq!(full.depth.blocks[0].conv1.weight, base.depth.blocks[0].conv1.weight);
        assert_eq!(full.depth.heads[0].weight, base.depth.heads[0].weight);
    }

    #[test]
    fn missing_branches_are_reported() {
        let base: ModelBundle<f32> = ModelBundle::new(cfg(Variant::Baseline, 5), 0).unwrap();
        let feats = base.encode(&ndarray::Array4::zeros((1, 3, 64, 64))).unwrap();
        assert!(base.decode_semantics(&feats).is_err());
        assert!(base.discriminate(feats.latent()).is_err());
    }

    #[test]
    fn end_to_end_eval_pipeline_shapes() {
        let model: ModelBundle<f32> = ModelBundle::new(cfg(Variant::Full, 5), 1).unwrap();
        let images = ndarray::Array4::zeros((2, 3, 64, 64));
        let feats = model.encode(&images).unwrap();
        let disps = model.decode_depth(&feats).unwrap();
        assert_eq!(disps[0].dim(), (2, 1, 64, 64));
        let logits = model.decode_semantics(&feats).unwrap();
        assert_eq!(logits[0].dim(), (2, 5, 64, 64));
        let dlogits = model.discriminate(feats.latent()).unwrap();
        assert_eq!(dlogits.dim(), (2, 1, 1, 1));
    }

    #[test]
    fn visit_and_count_agree() {
        let model: ModelBundle<f32> = ModelBundle::new(cfg(Variant::Full, 14), 3).unwrap();
        let mut n = 0;
        let mut names = Vec::new();
        model.visit("", &mut |name, shape, data| {
            assert_eq!(shape.iter().product::<usize>(), data.len());
            names.push(name);
            n += data.len();
        });
        assert_eq!(n, model.count_parameters().total);
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len(), "parameter names must be unique");
        assert!(names.iter().any(|n| n == "encoder.layer4.1.conv2.weight"));
        assert!(names.iter().any(|n| n == "depth.block1.conv1.weight"));
        assert!(names.iter().any(|n| n == "semantics.head3.bias"));
        assert!(names.iter().any(|n| n == "domain.conv4.weight"));
    }
}
