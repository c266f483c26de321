use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use salienc3d_core::data::{
    decode_ppm, encode_pgm, load_manifest, load_sample, make_batch, resize_bilinear,
    synth_generate, Image, ManifestEntry, SynthSpec,
};
use salienc3d_core::gradcheck::{self, Backwards};
use salienc3d_core::metrics::{aggregate, mean_curve, score_frame, RocCurve};
use salienc3d_core::net::{ModelParams, Network};
use salienc3d_core::optim::{mse_loss, AdamState};
use salienc3d_core::persist;

use crate::config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_CHECKPOINT: u8 = 4;

/// A command failure: the process exit code and the message for stderr.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

pub type Outcome = Result<(), Failure>;

fn config_err(e: impl ToString) -> Failure {
    Failure::new(EXIT_CONFIG, e)
}

fn data_err(e: impl ToString) -> Failure {
    Failure::new(EXIT_DATA, e)
}

fn ckpt_err(e: impl ToString) -> Failure {
    Failure::new(EXIT_CHECKPOINT, e)
}

fn write_err(e: std::io::Error) -> Failure {
    Failure::new(EXIT_FAILED, format!("cannot write output: {e}"))
}

fn network(cfg: &RunConfig) -> Result<Network, Failure> {
    cfg.validate().map_err(config_err)?;
    Network::new(cfg.arch().map_err(config_err)?).map_err(config_err)
}

fn manifest(cfg: &RunConfig) -> Result<Vec<ManifestEntry>, Failure> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| config_err("no manifest given (config key `manifest` or --manifest)"))?;
    let entries = load_manifest(path).map_err(data_err)?;
    if entries.is_empty() {
        return Err(data_err(format!("{} has no entries", path.display())));
    }
    Ok(entries)
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:06}.s3dn"))
}

/// The checkpoint with the highest step number in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let step: u64 = p
                .file_name()?
                .to_str()?
                .strip_prefix("step_")?
                .strip_suffix(".s3dn")?
                .parse()
                .ok()?;
            Some((step, p))
        })
        .max()
        .map(|(_, p)| p)
}

/// Endless stream of entry indices: one permutation per epoch when
/// shuffling, manifest order otherwise.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
    shuffle: bool,
}

impl Sampler {
    fn new(n: usize, seed: u64, shuffle: bool) -> Self {
        let mut s = Sampler {
            order: (0..n).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            shuffle,
        };
        if shuffle {
            s.order.shuffle(&mut s.rng);
        }
        s
    }

    fn next_batch(&mut self, k: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(k);
        while batch.len() < k {
            if self.pos == self.order.len() {
                self.pos = 0;
                if self.shuffle {
                    self.order.shuffle(&mut self.rng);
                }
            }
            batch.push(self.order[self.pos]);
            self.pos += 1;
        }
        batch
    }
}

/// Trains from seeded initial weights, or from `resume` when given, and
/// writes one `step,loss` row per step to `out`.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>, out: &mut dyn Write) -> Outcome {
    let net = network(cfg)?;
    let entries = manifest(cfg)?;
    let (mut params, mut adam) = match resume {
        Some(p) => {
            let (params, adam) = persist::load::<f32>(&net, p).map_err(ckpt_err)?;
            let mut adam = adam.unwrap_or_else(|| AdamState::new(cfg.adam()));
            adam.config = cfg.adam();
            (params, adam)
        }
        None => (
            net.init_params::<f32>(cfg.seed).map_err(config_err)?,
            AdamState::new(cfg.adam()),
        ),
    };
    fs::create_dir_all(&cfg.checkpoint_dir)
        .map_err(|e| ckpt_err(format!("{}: {e}", cfg.checkpoint_dir.display())))?;
    let save = |params: &ModelParams<f32>, adam: &AdamState<f32>| -> Outcome {
        persist::save(
            params,
            Some(adam),
            checkpoint_path(&cfg.checkpoint_dir, adam.step),
        )
        .map_err(ckpt_err)
    };

    let mut sampler = Sampler::new(entries.len(), cfg.seed, cfg.shuffle);
    writeln!(out, "step,loss").map_err(write_err)?;
    let first = adam.step;
    while adam.step < first + cfg.max_steps {
        let picked: Vec<&ManifestEntry> = sampler
            .next_batch(cfg.batch_size)
            .into_iter()
            .map(|i| &entries[i])
            .collect();
        let batch = make_batch(&picked, cfg.input_h, cfg.input_w, cfg.clamp_boundaries)
            .map_err(data_err)?;
        let (s, trace) = net
            .forward_train(&mut params, &batch.frames)
            .map_err(data_err)?;
        let loss = mse_loss(&s, &batch.gts).map_err(data_err)?;
        let grads = net
            .backward(&params, &trace, &loss.grad_s)
            .map_err(data_err)?;
        adam.step(&mut params, &grads).map_err(data_err)?;
        writeln!(out, "{},{}", adam.step, loss.loss).map_err(write_err)?;
        if adam.step % cfg.checkpoint_every == 0 {
            save(&params, &adam)?;
        }
    }
    if adam.step % cfg.checkpoint_every != 0 {
        save(&params, &adam)?;
    }
    Ok(())
}

/// Writes `<seq>_<index>.pgm` for every manifest entry into `out_dir`.
pub fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    out_dir: &Path,
    out: &mut dyn Write,
) -> Outcome {
    let net = network(cfg)?;
    let ckpt = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => latest_checkpoint(&cfg.checkpoint_dir).ok_or_else(|| {
            ckpt_err(format!(
                "no checkpoint found in {}",
                cfg.checkpoint_dir.display()
            ))
        })?,
    };
    let (params, _) = persist::load::<f32>(&net, &ckpt).map_err(ckpt_err)?;
    let entries = manifest(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| data_err(format!("{}: {e}", out_dir.display())))?;
    for e in &entries {
        let sample =
            load_sample(e, cfg.input_h, cfg.input_w, cfg.clamp_boundaries).map_err(data_err)?;
        let (s, _) = net
            .forward_infer(&params, &sample.frames)
            .map_err(data_err)?;
        let map = Image::new(cfg.input_h, cfg.input_w, 1, s.into_vec());
        let path = out_dir.join(format!("{}.pgm", e.frame_id()));
        encode_pgm(&map, &path).map_err(data_err)?;
    }
    writeln!(out, "wrote {} maps to {}", entries.len(), out_dir.display()).map_err(write_err)?;
    Ok(())
}

fn to_f64(img: &Image) -> Vec<f64> {
    img.data.iter().map(|&v| f64::from(v)).collect()
}

/// Scores `<saliency_dir>/<frame_id>.pgm` against each entry's ground
/// truth (resized to the map) and writes the report and mean ROC curve.
pub fn cmd_eval(
    cfg: &RunConfig,
    saliency_dir: &Path,
    report_path: &Path,
    roc_path: &Path,
    out: &mut dyn Write,
) -> Outcome {
    let entries = manifest(cfg)?;
    let missing: Vec<String> = entries
        .iter()
        .map(|e| saliency_dir.join(format!("{}.pgm", e.frame_id())))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(data_err(format!(
            "missing saliency maps:\n  {}",
            missing.join("\n  ")
        )));
    }

    let mut scored = Vec::with_capacity(entries.len());
    let mut curves: IndexMap<String, Vec<RocCurve>> = IndexMap::new();
    for e in &entries {
        let s = decode_ppm(saliency_dir.join(format!("{}.pgm", e.frame_id()))).map_err(data_err)?;
        let gt = decode_ppm(&e.gt).map_err(data_err)?;
        if s.channels != 1 || gt.channels != 1 {
            return Err(data_err(format!(
                "{}: maps must be single-channel",
                e.frame_id()
            )));
        }
        let gt = resize_bilinear(&gt, s.height, s.width);
        let (score, curve) = score_frame(&to_f64(&s), &to_f64(&gt)).map_err(data_err)?;
        if score.auc.is_some() {
            curves.entry(e.seq.clone()).or_default().push(curve);
        }
        scored.push((e.seq.clone(), e.frame_id(), score));
    }
    let report = aggregate(scored);

    for p in [report_path, roc_path] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| data_err(format!("{}: {e}", dir.display())))?;
        }
    }
    let mut buf = Vec::new();
    report.write_csv(&mut buf).map_err(write_err)?;
    fs::write(report_path, buf).map_err(|e| data_err(format!("{}: {e}", report_path.display())))?;

    let per_seq: Vec<RocCurve> = curves
        .values()
        .filter_map(|g| mean_curve(g.iter()))
        .collect();
    let mut buf = Vec::new();
    if let Some(c) = mean_curve(per_seq.iter()) {
        c.write_csv(&mut buf).map_err(write_err)?;
    } else {
        writeln!(buf, "threshold,fpr,tpr").map_err(write_err)?;
    }
    fs::write(roc_path, buf).map_err(|e| data_err(format!("{}: {e}", roc_path.display())))?;

    let na = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
    writeln!(
        out,
        "plcc={} auc={} nss={}",
        na(report.dataset.plcc),
        na(report.dataset.auc),
        na(report.dataset.nss)
    )
    .map_err(write_err)?;
    Ok(())
}

/// Runs the finite-difference suite and prints one line per op.
pub fn cmd_gradcheck(seed: u64, backwards: Backwards, out: &mut dyn Write) -> Outcome {
    let report = gradcheck::run(seed, backwards).map_err(|e| Failure::new(EXIT_FAILED, e))?;
    write!(out, "{report}").map_err(write_err)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_FAILED,
            format!("gradient check failed: {}", report.failures().join(", ")),
        ))
    }
}

/// Generates the synthetic clips into `out_dir` and prints the manifest path.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path, out: &mut dyn Write) -> Outcome {
    let spec = SynthSpec {
        n_sequences: cfg.n_sequences,
        frames_per_seq: cfg.frames_per_seq,
        height: cfg.input_h,
        width: cfg.input_w,
        seed: cfg.seed,
    };
    let path = synth_generate(out_dir, &spec).map_err(|e| match e {
        salienc3d_core::Error::Arch(msg) => config_err(msg),
        other => data_err(other),
    })?;
    writeln!(out, "{}", path.display()).map_err(write_err)?;
    Ok(())
}
