//! Training data: dataset layout, bicubic degradation, aligned patch
//! sampling, augmentation, mixup, rejection sampling and batch streams.

mod dataset;
mod resize;
mod sampler;
mod stream;

pub use dataset::{prepare_data, scan_dataset, DatasetIndex, DatasetMeta, IndexEntry, LoadedPair, TrainingSet};
pub use resize::{bicubic_resize, contributions, cubic, downscale, upscale, Contributions};
pub use sampler::{
    augment_color, augment_geometric, mixup_batch, mix_pairs, rejection_decision, rejection_filter,
    sample_patch_pair, ColorTransform, GeoTransform, PatchPair, Rejection, SamplerConfig,
};
pub use stream::{make_batch_stream, Batch, BatchStream, StreamOptions};
