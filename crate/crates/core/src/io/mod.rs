//! Persistence and ingestion: the DCTF binary tensor format, PNG images,
//! bilinear resizing, and dataset manifests.

pub mod dctf;
pub mod image;
pub mod manifest;

pub use dctf::{read_tensor, write_tensor};
pub use image::{load_image, resize_bilinear, save_image, ImageRGB};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, SampleRecord, Split};
