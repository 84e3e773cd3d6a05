//! Domain types, manifest ingestion and the resize/crop patch pipeline.

mod composite;
mod image;
mod label;
mod manifest;
mod patch;

pub use composite::{composite, Fingerprint, FingerprintedImage};
pub use image::{decode_pixel, encode_pixel, ImageTensor};
pub use label::{LabelSet, SourceLabel};
pub use manifest::{load_manifest, ClassEntry, DatasetManifest, Split};
pub use patch::{
    center_patch, prepare_patch, prepare_patch_at, Interpolation, PatchMode, PatchPolicy,
};
