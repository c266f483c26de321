//! Dataset ingestion: manifests, netpbm images, resizing, batching and the
//! synthetic clip generator.

mod batch;
mod image;
mod manifest;
mod netpbm;
mod resize;
mod synth;

pub use batch::{load_sample, make_batch, Batch, TripleSample};
pub use image::Image;
pub use manifest::{load_manifest, write_manifest, ManifestEntry};
pub use netpbm::{decode_bytes, decode_ppm, encode_bytes, encode_netpbm, encode_pgm, quantize};
pub use resize::resize_bilinear;
pub use synth::{synth_generate, SynthSpec, BACKGROUND, FOREGROUND, NOISE_STD};
