//! On-disk dataset format, batch formation, the random batch selector and the
//! synthetic dataset generator.

mod batch;
mod features;
mod manifest;
mod synth;

pub use batch::{form_batches, Batch, Draw, RandomBatchSelector, SelectorState};
pub use features::{
    decode_features, encode_features, read_features, read_ground_truth, read_video_features, write_features,
    write_ground_truth, Dataset, VideoRecord, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use manifest::{load_manifest, Label, Manifest, ManifestEntry};
pub use synth::{synth_generate, synth_videos, SynthConfig, SynthData, SynthOutput};

/// Default segment length in frames.
pub const DEFAULT_SEGMENT_LEN: usize = 16;
