//! Samples, Cornell-format I/O, preprocessing, augmentation and synthetic scenes.

mod augment;
pub mod cornell;
pub mod preprocess;
mod sample;
pub mod synth;

pub use augment::{apply_transform, augment, AugmentConfig, GeoTransform};
pub use cornell::{
    load_cornell_dir, load_splits, write_synth_dir, DatasetManifest, LoadOptions, LoadedSplits,
};
pub use preprocess::{depth_to_3ch, Preprocess};
pub use sample::Sample;
pub use synth::{synth_generate, Background, ShapeKind, SynthConfig, SynthDataset};
