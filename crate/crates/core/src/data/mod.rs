//! Event streams, frame integration, augmentation and datasets.

pub mod augment;
pub mod dataset;
pub mod events;
pub mod frames;
pub mod split;
pub mod synthetic;

pub use augment::{augment, AugmentPolicy, SoftSample};
pub use dataset::{
    load_streams, read_manifest, stack_batch, write_dataset, Dataset, ManifestEntry,
};
pub use events::{read_events, write_events, Event, EventFormat, EventStream};
pub use frames::{integrate_frames, replicate_static, slice_bounds};
pub use split::split_train_test;
pub use synthetic::{gen_synthetic, SyntheticConfig};
