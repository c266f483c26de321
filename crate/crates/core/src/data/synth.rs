//! Synthetic clips: a bright square moving linearly over dark noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{encode_netpbm, write_manifest, Image, ManifestEntry};
use crate::error::{Error, Result};

pub const BACKGROUND: f64 = 0.1;
pub const FOREGROUND: f64 = 0.9;
pub const NOISE_STD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub n_sequences: usize,
    pub frames_per_seq: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Side length of the square, a quarter of the shorter image side.
    pub fn square_side(&self) -> usize {
        (self.height.min(self.width) / 4).max(1)
    }
}

fn position(start: usize, end: usize, j: usize, frames: usize) -> usize {
    if frames <= 1 {
        return start;
    }
    let t = j as f64 / (frames - 1) as f64;
    (start as f64 + (end as f64 - start as f64) * t).round() as usize
}

/// Writes `seqNN/frame_JJJ.ppm` and `seqNN/gt_JJJ.pgm` under `out_dir` plus
/// `manifest.jsonl` with one entry per frame; the first and last frame of a
/// clip reuse themselves as the missing neighbour. Returns the manifest path.
pub fn synth_generate(out_dir: impl AsRef<Path>, spec: &SynthSpec) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    if !spec.height.is_multiple_of(32)
        || !spec.width.is_multiple_of(32)
        || spec.height == 0
        || spec.width == 0
    {
        return Err(Error::Arch(format!(
            "synthetic frames must be multiples of 32, got {}×{}",
            spec.height, spec.width
        )));
    }
    if spec.n_sequences == 0 || spec.frames_per_seq == 0 {
        return Err(Error::Arch(
            "synthetic dataset needs at least one frame".into(),
        ));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let (h, w, side) = (spec.height, spec.width, spec.square_side());
    let mut entries = Vec::new();

    for s in 0..spec.n_sequences {
        let seq = format!("seq{s:02}");
        let dir = out_dir.join(&seq);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (y0, y1) = (
            rng.random_range(0..=h - side),
            rng.random_range(0..=h - side),
        );
        let (x0, x1) = (
            rng.random_range(0..=w - side),
            rng.random_range(0..=w - side),
        );
        let frame_path = |j: usize| dir.join(format!("frame_{j:03}.ppm"));
        let gt_path = |j: usize| dir.join(format!("gt_{j:03}.pgm"));

        for j in 0..spec.frames_per_seq {
            let top = position(y0, y1, j, spec.frames_per_seq);
            let left = position(x0, x1, j, spec.frames_per_seq);
            let inside = |y: usize, x: usize| {
                (top..top + side).contains(&y) && (left..left + side).contains(&x)
            };
            let mut frame = Vec::with_capacity(h * w * 3);
            let mut gt = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    let (base, mask) = if inside(y, x) {
                        (FOREGROUND, 1.0)
                    } else {
                        (BACKGROUND, 0.0)
                    };
                    for _ in 0..3 {
                        let v = (base + noise.sample(&mut rng)).clamp(0.0, 1.0);
                        frame.push(v as f32);
                    }
                    gt.push(mask);
                }
            }
            encode_netpbm(&Image::new(h, w, 3, frame), frame_path(j))?;
            encode_netpbm(&Image::new(h, w, 1, gt), gt_path(j))?;
        }
        for j in 0..spec.frames_per_seq {
            let prev = j.saturating_sub(1);
            let next = (j + 1).min(spec.frames_per_seq - 1);
            entries.push(ManifestEntry {
                seq: seq.clone(),
                frames: [frame_path(prev), frame_path(j), frame_path(next)],
                gt: gt_path(j),
                index: j,
            });
        }
    }
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
