//! Run configuration: a flat JSON object whose keys are all optional.

use std::fs;
use std::path::{Path, PathBuf};

use salienc3d_core::net::ArchPreset;
use salienc3d_core::optim::AdamConfig;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub input_h: usize,
    pub input_w: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_steps: u64,
    pub seed: u64,
    pub shuffle: bool,
    pub checkpoint_every: u64,
    /// Substitute the centre frame for a neighbour file that does not exist.
    pub clamp_boundaries: bool,
    pub manifest: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Where `eval` reads saliency maps; defaults to `output_dir`.
    pub saliency_dir: Option<PathBuf>,
    pub n_sequences: usize,
    pub frames_per_seq: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        RunConfig {
            preset: "paper".into(),
            input_h: 224,
            input_w: 224,
            batch_size: 4,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            max_steps: 1000,
            seed: 0,
            shuffle: true,
            checkpoint_every: 100,
            clamp_boundaries: false,
            manifest: None,
            checkpoint_dir: "checkpoints".into(),
            output_dir: "output".into(),
            saliency_dir: None,
            n_sequences: 4,
            frames_per_seq: 4,
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text =
            fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.checkpoint_dir);
        rebase(&mut cfg.output_dir);
        if let Some(m) = cfg.manifest.as_mut() {
            rebase(m);
        }
        if let Some(s) = cfg.saliency_dir.as_mut() {
            rebase(s);
        }
        Ok(cfg)
    }

    pub fn arch(&self) -> Result<ArchPreset, String> {
        ArchPreset::by_name(&self.preset).map_err(|e| e.to_string())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let arch = self.arch()?;
        let div = arch.spatial_divisor();
        if self.input_h == 0
            || self.input_w == 0
            || !self.input_h.is_multiple_of(div)
            || !self.input_w.is_multiple_of(div)
        {
            return Err(format!(
                "input_h and input_w must be positive multiples of {div} for preset {}, got {}×{}",
                self.preset, self.input_h, self.input_w
            ));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if self.max_steps == 0 {
            return Err("max_steps must be at least 1".into());
        }
        if self.checkpoint_every == 0 {
            return Err("checkpoint_every must be at least 1".into());
        }
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !(self.learning_rate > 0.0 && unit(self.beta1) && unit(self.beta2) && self.epsilon > 0.0)
        {
            return Err("Adam needs learning_rate > 0, betas in [0, 1) and epsilon > 0".into());
        }
        Ok(())
    }

    pub fn saliency_dir(&self) -> &Path {
        self.saliency_dir.as_deref().unwrap_or(&self.output_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.learning_rate, 1e-4);
        cfg.validate().unwrap();
    }

    #[test]
    fn invariants_are_checked() {
        let bad = [
            r#"{"input_h": 100}"#,
            r#"{"batch_size": 0}"#,
            r#"{"max_steps": 0}"#,
            r#"{"preset": "huge"}"#,
            r#"{"beta1": 1.0}"#,
        ];
        for text in bad {
            let cfg: RunConfig = serde_json::from_str(text).unwrap();
            assert!(cfg.validate().is_err(), "{text}");
        }
        assert!(serde_json::from_str::<RunConfig>(r#"{"unknown": 1}"#).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(
            &path,
            r#"{"manifest": "data/m.jsonl", "output_dir": "/abs"}"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.manifest.unwrap(), dir.path().join("data/m.jsonl"));
        assert_eq!(cfg.output_dir, PathBuf::from("/abs"));
        assert_eq!(cfg.checkpoint_dir, dir.path().join("checkpoints"));
    }
}
