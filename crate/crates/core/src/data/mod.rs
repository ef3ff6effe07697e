//! Feature bags, manifests, synthetic cohorts and cross-validation splits.

mod bag;
mod dataset;
mod manifest;
mod split;
mod synth;

pub use bag::{read_bag, write_bag, FeatureBag, Scale, ScaleFeatures, BAG_MAGIC, BAG_VERSION};
pub use dataset::{Dataset, Slide};
pub use manifest::{format_manifest, parse_manifest, read_manifest, write_manifest, ManifestRecord, MANIFEST_FILE};
pub use split::{kfold_split, Fold};
pub use synth::{slide_id, synth_generate, write_dataset, SignalMode, SynthConfig, SynthSlide};
