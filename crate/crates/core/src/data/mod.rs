//! Dataset ingestion, training-time augmentation and synthetic scenes.

pub mod augment;
pub mod manifest;
pub mod synth;

pub use augment::{add_noise, augment_image, crop_patches, hflip, AugmentationConfig};
pub use manifest::{load_manifest, parse_manifest, DatasetManifest, ManifestEntry, Split};
pub use synth::{synth_scene, SynthConfig};
