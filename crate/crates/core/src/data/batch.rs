use std::path::Path;

use super::{decode_ppm, resize_bilinear, Image, ManifestEntry};
use crate::error::{Error, Result};
use crate::tensor5::{Shape5, Tensor5};

/// Three frames and the ground truth of the middle one, resized to the
/// network input.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleSample {
    /// `(1, 3, H, W, 3)`.
    pub frames: Tensor5<f32>,
    /// `(1, 1, H, W, 1)`, soft values after resizing.
    pub gt: Tensor5<f32>,
    pub seq: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `(k, 3, H, W, 3)`.
    pub frames: Tensor5<f32>,
    /// `(k, 1, H, W, 1)`.
    pub gts: Tensor5<f32>,
}

fn to_tensor(images: &[Image], channels: usize) -> Result<Tensor5<f32>> {
    let (h, w) = (images[0].height, images[0].width);
    let shape = Shape5::new(1, images.len(), h, w, channels)?;
    let mut data = Vec::with_capacity(shape.len());
    for img in images {
        data.extend_from_slice(&img.data);
    }
    Tensor5::from_vec(shape, data)
}

/// Loads one manifest entry. With `clamp_boundaries`, a missing previous or
/// next frame file is replaced by the current frame, duplicating it at the
/// ends of a clip.
pub fn load_sample(
    entry: &ManifestEntry,
    input_h: usize,
    input_w: usize,
    clamp_boundaries: bool,
) -> Result<TripleSample> {
    let load_frame = |p: &Path| -> Result<Image> {
        let img = decode_ppm(p)?.expand_channels(3);
        if img.channels != 3 {
            return Err(Error::Image {
                path: p.to_path_buf(),
                msg: format!("frames need 3 channels, got {}", img.channels),
            });
        }
        Ok(resize_bilinear(&img, input_h, input_w))
    };
    let center = load_frame(&entry.frames[1])?;
    let neighbour = |p: &Path| -> Result<Image> {
        if clamp_boundaries && !p.exists() {
            Ok(center.clone())
        } else {
            load_frame(p)
        }
    };
    let prev = neighbour(&entry.frames[0])?;
    let next = neighbour(&entry.frames[2])?;

    let gt = decode_ppm(&entry.gt)?;
    if gt.channels != 1 {
        return Err(Error::Image {
            path: entry.gt.clone(),
            msg: "ground truth must be a single-channel PGM".into(),
        });
    }
    let gt = resize_bilinear(&gt, input_h, input_w);
    Ok(TripleSample {
        frames: to_tensor(&[prev, center, next], 3)?,
        gt: to_tensor(&[gt], 1)?,
        seq: entry.seq.clone(),
        index: entry.index,
    })
}

/// Decodes and stacks entries along the batch axis, in the given order.
pub fn make_batch(
    entries: &[&ManifestEntry],
    input_h: usize,
    input_w: usize,
    clamp_boundaries: bool,
) -> Result<Batch> {
    let samples = entries
        .iter()
        .map(|e| load_sample(e, input_h, input_w, clamp_boundaries))
        .collect::<Result<Vec<_>>>()?;
    let frames: Vec<_> = samples.iter().map(|s| s.frames.clone()).collect();
    let gts: Vec<_> = samples.iter().map(|s| s.gt.clone()).collect();
    Ok(Batch {
        frames: Tensor5::concat_batch(&frames)?,
        gts: Tensor5::concat_batch(&gts)?,
    })
}
