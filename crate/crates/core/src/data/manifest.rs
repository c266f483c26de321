//! Line-delimited JSON manifests pairing frame triples with ground truth.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    seq: String,
    frames: Vec<String>,
    gt: String,
}

/// One training/evaluation unit: previous, current and next frame plus the
/// ground truth of the current frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub seq: String,
    pub frames: [PathBuf; 3],
    pub gt: PathBuf,
    /// Position of this entry among the entries of its sequence.
    pub index: usize,
}

impl ManifestEntry {
    /// `<seq>_<index>`, the stem of the saliency map predicted for it.
    pub fn frame_id(&self) -> String {
        format!("{}_{}", self.seq, self.index)
    }
}

/// Parses one JSON object per non-empty line. Relative paths are resolved
/// against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let line: Line = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        let frames: [String; 3] = line
            .frames
            .try_into()
            .map_err(|f: Vec<String>| err(format!("expected 3 frame paths, got {}", f.len())))?;
        if line.seq.is_empty() || line.gt.is_empty() || frames.iter().any(String::is_empty) {
            return Err(err("empty sequence id or path".into()));
        }
        let index = entries.iter().filter(|e| e.seq == line.seq).count();
        entries.push(ManifestEntry {
            seq: line.seq,
            frames: frames.map(|f| base.join(f)),
            gt: base.join(line.gt),
            index,
        });
    }
    Ok(entries)
}

/// Writes entries with paths made relative to `dir` where possible.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| -> String {
        p.strip_prefix(dir)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let mut out = Vec::new();
    for e in entries {
        let line = Line {
            seq: e.seq.clone(),
            frames: e.frames.iter().map(|f| rel(f)).collect(),
            gt: rel(&e.gt),
        };
        serde_json::to_writer(&mut out, &line).expect("manifest lines serialize");
        out.write_all(b"\n").expect("in-memory write");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
