use std::fs;
use std::path::Path;

use salienc3d_core::data::{
    decode_ppm, encode_netpbm, load_manifest, make_batch, synth_generate, write_manifest, Image,
    ManifestEntry, SynthSpec,
};
use salienc3d_core::tensor5::Shape5;

fn spec(n_sequences: usize, frames_per_seq: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_sequences,
        frames_per_seq,
        height: 64,
        width: 64,
        seed,
    }
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_manifest_counts_and_neighbours() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_generate(dir.path(), &spec(2, 5, 3)).unwrap();
    let entries = load_manifest(&manifest).unwrap();
    assert_eq!(entries.len(), 10);
    for e in &entries {
        for f in &e.frames {
            assert!(f.exists());
            assert_eq!(f.parent(), e.gt.parent(), "triple mixes sequences");
        }
    }
    assert_eq!(entries[0].frames[0], entries[0].frames[1]);
    assert_eq!(entries[4].frames[2], entries[4].frames[1]);
    assert_eq!(entries[5].frame_id(), "seq01_0");
}

#[test]
fn synth_gt_is_the_square_mask() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(3, 4, 8);
    let manifest = synth_generate(dir.path(), &s).unwrap();
    let side = s.square_side();
    for e in load_manifest(&manifest).unwrap() {
        let gt = decode_ppm(&e.gt).unwrap();
        assert_eq!((gt.height, gt.width, gt.channels), (64, 64, 1));
        assert!(gt.data.iter().all(|&v| v == 0.0 || v == 1.0));
        let positives = gt.data.iter().filter(|&&v| v >= 0.5).count();
        assert_eq!(positives, side * side);

        let frame = decode_ppm(&e.frames[1]).unwrap();
        let mean = |inside: bool| {
            let vals: Vec<f32> = (0..64 * 64)
                .filter(|&i| (gt.data[i] == 1.0) == inside)
                .map(|i| frame.data[3 * i])
                .collect();
            vals.iter().sum::<f32>() / vals.len() as f32
        };
        assert!((mean(true) - 0.9).abs() < 0.02);
        assert!((mean(false) - 0.1).abs() < 0.02);
    }
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    synth_generate(a.path(), &spec(2, 3, 5)).unwrap();
    synth_generate(b.path(), &spec(2, 3, 5)).unwrap();
    synth_generate(c.path(), &spec(2, 3, 6)).unwrap();
    assert_eq!(read_tree(a.path()), read_tree(b.path()));
    assert_ne!(read_tree(a.path()), read_tree(c.path()));
}

#[test]
fn synth_rejects_bad_extents() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(1, 1, 0);
    s.height = 48;
    assert!(synth_generate(dir.path(), &s).is_err());
}

#[test]
fn batches_have_expected_shapes_and_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_generate(dir.path(), &spec(1, 4, 1)).unwrap();
    let entries = load_manifest(&manifest).unwrap();
    let refs: Vec<&ManifestEntry> = entries.iter().collect();
    let b = make_batch(&refs, 64, 64, false).unwrap();
    assert_eq!(b.frames.shape(), Shape5::new(4, 3, 64, 64, 3).unwrap());
    assert_eq!(b.gts.shape(), Shape5::new(4, 1, 64, 64, 1).unwrap());
    assert_eq!(b, make_batch(&refs, 64, 64, false).unwrap());

    let one = make_batch(&refs[..1], 32, 32, false).unwrap();
    assert_eq!(one.frames.shape(), Shape5::new(1, 3, 32, 32, 3).unwrap());
    assert_eq!(one.gts.shape(), Shape5::new(1, 1, 32, 32, 1).unwrap());
    assert!(one.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn missing_neighbours_clamp_only_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let frame = Image::filled(32, 32, 3, 0.5);
    let gt = Image::filled(32, 32, 1, 1.0);
    encode_netpbm(&frame, dir.path().join("f1.ppm")).unwrap();
    encode_netpbm(&gt, dir.path().join("g1.pgm")).unwrap();
    let entry = ManifestEntry {
        seq: "s".into(),
        frames: [
            dir.path().join("f0.ppm"),
            dir.path().join("f1.ppm"),
            dir.path().join("f2.ppm"),
        ],
        gt: dir.path().join("g1.pgm"),
        index: 0,
    };
    let err = make_batch(&[&entry], 32, 32, false).unwrap_err();
    assert!(err.to_string().contains("f0.ppm"), "{err}");
    let b = make_batch(&[&entry], 32, 32, true).unwrap();
    assert!(b
        .frames
        .data()
        .iter()
        .all(|&v| (v - 128.0 / 255.0).abs() < 1e-6));
}

#[test]
fn manifest_round_trip_keeps_order_and_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    fs::write(&path, "").unwrap();
    assert!(load_manifest(&path).unwrap().is_empty());

    let text = "{\"seq\":\"b\",\"frames\":[\"x/0.ppm\",\"x/1.ppm\",\"x/2.ppm\"],\"gt\":\"x/g1.pgm\"}\n\
                \n\
                {\"seq\":\"a\",\"frames\":[\"y/0.ppm\",\"y/1.ppm\",\"y/2.ppm\"],\"gt\":\"y/g1.pgm\"}\n";
    fs::write(&path, text).unwrap();
    let entries = load_manifest(&path).unwrap();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[0].seq, "b");
    assert_eq!(entries[1].frames[2], dir.path().join("y/2.ppm"));

    let copy = dir.path().join("copy.jsonl");
    write_manifest(&copy, &entries).unwrap();
    assert_eq!(load_manifest(&copy).unwrap(), entries);
    assert!(fs::read_to_string(&copy).unwrap().contains("\"x/0.ppm\""));
}
