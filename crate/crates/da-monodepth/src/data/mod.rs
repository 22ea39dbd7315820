//! On-disk sample formats, manifests, preprocessing, batch scheduling, and
//! the synthetic two-domain benchmark generator.

pub mod batches;
pub mod codec;
pub mod manifest;
pub mod preprocess;
pub mod synth;

pub use batches::{make_domain_batches, BatchPair, DomainBatches};
pub use codec::{
    read_depth_png, read_label_png, read_rgb_png, write_depth_png, write_label_png,
    write_rgb_png, DEPTH_SCALE, MAX_ENCODABLE_DEPTH,
};
pub use manifest::{
    load_dataset, write_manifest, DatasetManifest, Domain, Sample, Split, SYNTH_CLASS_NAMES,
};
pub use preprocess::{
    augment, load_batch, preprocess, AugmentOptions, Batch, PreparedSample, PreprocessOptions,
};
pub use synth::{
    generate_dataset, render_scene, synth_generate, DomainStyle, RenderedScene, SceneSpec,
    SynthConfig, SYNTH_DEPTH_MAX, SYNTH_DEPTH_MIN,
};
