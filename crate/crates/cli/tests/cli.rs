use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use salienc3d::commands::latest_checkpoint;
use salienc3d::{run, run_with, Cli, EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_DATA, EXIT_FAILED};
use salienc3d_core::data::{encode_pgm, load_manifest, write_manifest, Image, ManifestEntry};
use salienc3d_core::gradcheck::{Backwards, ConvGrads};
use salienc3d_core::metrics::{score_frame, FrameScore};
use salienc3d_core::ops::{self, Kernel3D, Padding};
use salienc3d_core::tensor5::Tensor5;

fn cli(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("salienc3d").chain(args.iter().copied())).unwrap()
}

fn exec(args: &[&str]) -> (Result<(), salienc3d::Failure>, String) {
    let mut out = Vec::new();
    let r = run(&cli(args), &mut out);
    (r, String::from_utf8(out).unwrap())
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("run.json");
    fs::write(&p, json).unwrap();
    p
}

/// Tiny preset at 32×32 over one synthetic sequence.
fn small_setup(dir: &Path, frames: usize, extra: &str) -> String {
    let cfg = write_config(
        dir,
        &format!(
            r#"{{"preset":"tiny","input_h":32,"input_w":32,"batch_size":2,"learning_rate":0.001,
                "seed":3,"manifest":"data/manifest.jsonl","checkpoint_dir":"ckpt","output_dir":"pred",
                "n_sequences":1,"frames_per_seq":{frames}{extra}}}"#
        ),
    );
    let cfg = cfg.to_str().unwrap().to_string();
    let data = dir.join("data");
    let (r, out) = exec(&["synth", "--config", &cfg, "--out", data.to_str().unwrap()]);
    r.unwrap();
    assert_eq!(
        out.trim(),
        data.join("manifest.jsonl").display().to_string()
    );
    cfg
}

#[test]
fn one_step_gives_one_row_and_one_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), 1, r#","max_steps":1"#);
    let (r, log) = exec(&["train", "--config", &cfg]);
    r.unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step,loss");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,"));
    let ckpts: Vec<_> = fs::read_dir(dir.path().join("ckpt")).unwrap().collect();
    assert_eq!(ckpts.len(), 1);
    assert!(latest_checkpoint(&dir.path().join("ckpt"))
        .unwrap()
        .ends_with("step_000001.s3dn"));
}

#[test]
fn training_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), 3, r#","max_steps":3,"checkpoint_every":2"#);
    let (r, a) = exec(&[
        "train",
        "--config",
        &cfg,
        "--out",
        dir.path().join("a").to_str().unwrap(),
    ]);
    r.unwrap();
    let (r, b) = exec(&[
        "train",
        "--config",
        &cfg,
        "--out",
        dir.path().join("b").to_str().unwrap(),
    ]);
    r.unwrap();
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 4);
    for name in ["step_000002.s3dn", "step_000003.s3dn"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(name)).unwrap(),
            fs::read(dir.path().join("b").join(name)).unwrap()
        );
    }
    let (r, c) = exec(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "4",
        "--out",
        dir.path().join("c").to_str().unwrap(),
    ]);
    r.unwrap();
    assert_ne!(a, c);

    let resume = dir.path().join("a/step_000002.s3dn");
    let (r, d) = exec(&[
        "train",
        "--config",
        &cfg,
        "--checkpoint",
        resume.to_str().unwrap(),
        "--out",
        dir.path().join("d").to_str().unwrap(),
    ]);
    r.unwrap();
    assert!(d.lines().nth(1).unwrap().starts_with("3,"));
    assert!(dir.path().join("d/step_000005.s3dn").exists());
}

#[test]
fn predict_writes_one_map_per_entry_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), 3, r#","max_steps":1"#);
    exec(&["train", "--config", &cfg]).0.unwrap();
    let p1 = dir.path().join("p1");
    let p2 = dir.path().join("p2");
    exec(&["predict", "--config", &cfg, "--out", p1.to_str().unwrap()])
        .0
        .unwrap();
    exec(&["predict", "--config", &cfg, "--out", p2.to_str().unwrap()])
        .0
        .unwrap();
    for i in 0..3 {
        let name = format!("seq00_{i}.pgm");
        let bytes = fs::read(p1.join(&name)).unwrap();
        assert!(bytes.starts_with(b"P5\n32 32\n255\n"));
        assert_eq!(bytes.len(), 13 + 32 * 32);
        assert_eq!(bytes, fs::read(p2.join(&name)).unwrap());
    }
    assert_eq!(fs::read_dir(&p1).unwrap().count(), 3);
}

#[test]
fn predict_checkpoint_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), 1, "");
    let (r, _) = exec(&["predict", "--config", &cfg]);
    assert_eq!(r.unwrap_err().code, EXIT_CHECKPOINT);
    let bad = dir.path().join("bad.s3dn");
    fs::write(&bad, b"XXXX\x01\x00\x00\x00").unwrap();
    let (r, _) = exec(&[
        "predict",
        "--config",
        &cfg,
        "--checkpoint",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(r.unwrap_err().code, EXIT_CHECKPOINT);
}

fn gt_map(i: usize) -> Image {
    let data = (0..32 * 32)
        .map(|p| {
            let (y, x) = (p / 32, p % 32);
            f32::from(u8::from((y / 8 + x / 8 + i).is_multiple_of(3)))
        })
        .collect();
    Image::new(32, 32, 1, data)
}

/// GT maps for sequences `a` (two frames) and `b` (one frame), and saliency
/// maps produced by `saliency(frame_number, gt)`.
fn eval_fixture(
    dir: &Path,
    saliency: impl Fn(usize, &Image) -> Image,
) -> (String, Vec<Image>, Vec<Image>) {
    fs::create_dir_all(dir.join("maps")).unwrap();
    let mut entries = Vec::new();
    let (mut gts, mut maps) = (Vec::new(), Vec::new());
    for (i, (seq, index)) in [("a", 0), ("a", 1), ("b", 0)].into_iter().enumerate() {
        let gt = gt_map(i);
        let gt_path = dir.join(format!("gt{i}.pgm"));
        encode_pgm(&gt, &gt_path).unwrap();
        let s = saliency(i, &gt);
        encode_pgm(&s, dir.join("maps").join(format!("{seq}_{index}.pgm"))).unwrap();
        let frame = dir.join("unused.ppm");
        entries.push(ManifestEntry {
            seq: seq.into(),
            frames: [frame.clone(), frame.clone(), frame],
            gt: gt_path,
            index,
        });
        gts.push(gt);
        maps.push(s);
    }
    write_manifest(dir.join("m.jsonl"), &entries).unwrap();
    let cfg = write_config(
        dir,
        r#"{"preset":"tiny","input_h":32,"input_w":32,"manifest":"m.jsonl","saliency_dir":"maps"}"#,
    );
    (cfg.to_str().unwrap().to_string(), gts, maps)
}

fn dataset_row(report: &str) -> Vec<String> {
    report
        .lines()
        .find(|l| l.starts_with("dataset,"))
        .unwrap()
        .split(',')
        .map(String::from)
        .collect()
}

#[test]
fn eval_perfect_and_inverted_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ..) = eval_fixture(dir.path(), |_, g| g.clone());
    let out = dir.path().join("eval");
    exec(&["eval", "--config", &cfg, "--out", out.to_str().unwrap()])
        .0
        .unwrap();
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.starts_with("level,id,plcc,auc,nss,flags\n"));
    let row = dataset_row(&report);
    assert_eq!(
        (row[1].as_str(), row[2].as_str(), row[3].as_str()),
        ("all", "1.000000", "1.000000")
    );
    assert!(row[4].parse::<f64>().unwrap() > 0.0);
    let roc = fs::read_to_string(out.join("roc.csv")).unwrap();
    assert_eq!(roc.lines().next().unwrap(), "threshold,fpr,tpr");
    assert_eq!(roc.lines().count(), 1 + 258);

    let (cfg, ..) = eval_fixture(dir.path(), |_, g| {
        Image::new(32, 32, 1, g.data.iter().map(|v| 1.0 - v).collect())
    });
    exec(&["eval", "--config", &cfg, "--out", out.to_str().unwrap()])
        .0
        .unwrap();
    let row = dataset_row(&fs::read_to_string(out.join("report.csv")).unwrap());
    assert_eq!(row[3], "0.000000");
}

#[test]
fn eval_report_matches_hand_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, gts, maps) = eval_fixture(dir.path(), |i, _| {
        let data = (0..32 * 32)
            .map(|p| (((p * (i + 3)) % 97) as f32 / 96.0 * 255.0).round() / 255.0)
            .collect();
        Image::new(32, 32, 1, data)
    });
    let out = dir.path().join("eval");
    exec(&["eval", "--config", &cfg, "--out", out.to_str().unwrap()])
        .0
        .unwrap();

    let f64s = |img: &Image| img.data.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
    let scores: Vec<FrameScore> = maps
        .iter()
        .zip(&gts)
        .map(|(s, g)| score_frame(&f64s(s), &f64s(g)).unwrap().0)
        .collect();
    let plcc = |i: usize| scores[i].plcc.unwrap();
    let seq_a = (plcc(0) + plcc(1)) / 2.0;
    let seq_b = plcc(2);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<Vec<&str>> = report
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 3 + 2 + 1);
    assert_eq!(rows[3][..3], ["sequence", "a", &format!("{seq_a:.6}")[..]]);
    assert_eq!(rows[4][2], format!("{seq_b:.6}"));
    assert_eq!(rows[5][2], format!("{:.6}", (seq_a + seq_b) / 2.0));
}

#[test]
fn eval_missing_map_exits_3_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ..) = eval_fixture(dir.path(), |_, g| g.clone());
    fs::remove_file(dir.path().join("maps/a_1.pgm")).unwrap();
    let err = exec(&[
        "eval",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ])
    .0
    .unwrap_err();
    assert_eq!(err.code, EXIT_DATA);
    assert!(err.message.contains("a_1.pgm"), "{}", err.message);
}

fn broken(
    x: &Tensor5<f64>,
    k: &Kernel3D<f64>,
    p: Padding,
    g: &Tensor5<f64>,
) -> salienc3d_core::Result<ConvGrads<f64>> {
    let mut grads = ops::conv3d_backward(x, k, p, g)?;
    grads.grad_x = grads.grad_x.scale(0.5);
    Ok(grads)
}

#[test]
fn gradcheck_lists_each_op_and_catches_a_broken_conv() {
    let (r, out) = exec(&["gradcheck", "--seed", "5"]);
    r.unwrap();
    let ops = [
        "conv3d",
        "deconv3d",
        "maxpool3d",
        "unpool3d",
        "batchnorm",
        "relu",
        "sigmoid",
        "mse_loss",
        "micro_model",
    ];
    let first: Vec<&str> = out
        .lines()
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(first, ops);
    for line in out.lines() {
        let err: f64 = line
            .split("max_rel_err=")
            .nth(1)
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert!(err < 1e-4, "{line}");
    }

    let bad = Backwards {
        conv3d: broken,
        ..Backwards::default()
    };
    let mut sink = Vec::new();
    let err = run_with(&cli(&["gradcheck"]), bad, &mut sink).unwrap_err();
    assert_eq!(err.code, EXIT_FAILED);
    assert!(err.message.contains("conv3d"));
    assert!(!err.message.contains("deconv3d"));
}

#[test]
fn synth_counts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"input_h":32,"input_w":64,"n_sequences":3,"frames_per_seq":2,"seed":9}"#,
    );
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    exec(&["synth", "--config", cfg, "--out", a.to_str().unwrap()])
        .0
        .unwrap();
    exec(&["synth", "--config", cfg, "--out", b.to_str().unwrap()])
        .0
        .unwrap();
    assert_eq!(load_manifest(a.join("manifest.jsonl")).unwrap().len(), 6);
    for rel in ["manifest.jsonl", "seq02/frame_001.ppm", "seq01/gt_000.pgm"] {
        assert_eq!(
            fs::read(a.join(rel)).unwrap(),
            fs::read(b.join(rel)).unwrap()
        );
    }
}

#[test]
fn config_and_data_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_json = write_config(dir.path(), "{not json");
    let err = exec(&["train", "--config", bad_json.to_str().unwrap()])
        .0
        .unwrap_err();
    assert_eq!(err.code, EXIT_CONFIG);

    let bad_size = write_config(
        dir.path(),
        r#"{"preset":"tiny","input_h":40,"manifest":"m.jsonl"}"#,
    );
    let err = exec(&["train", "--config", bad_size.to_str().unwrap()])
        .0
        .unwrap_err();
    assert_eq!(err.code, EXIT_CONFIG);
    let err = exec(&[
        "synth",
        "--config",
        bad_size.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ])
    .0
    .unwrap_err();
    assert_eq!(err.code, EXIT_CONFIG);

    let no_manifest = write_config(
        dir.path(),
        r#"{"preset":"tiny","input_h":32,"input_w":32,"manifest":"absent.jsonl"}"#,
    );
    let err = exec(&["train", "--config", no_manifest.to_str().unwrap()])
        .0
        .unwrap_err();
    assert_eq!(err.code, EXIT_DATA);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_salienc3d");
    let dir = tempfile::tempdir().unwrap();
    let out = Process::new(bin)
        .args(["synth", "--out"])
        .arg(dir.path())
        .args(["--seed", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .trim()
        .ends_with("manifest.jsonl"));

    let cfg = write_config(dir.path(), r#"{"batch_size":0}"#);
    let out = Process::new(bin)
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(i32::from(EXIT_CONFIG)));
    assert!(!out.stderr.is_empty());

    let out = Process::new(bin).arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(i32::from(EXIT_CONFIG)));
}
