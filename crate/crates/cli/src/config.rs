//! Experiment configuration: `key = value` files with per-task defaults.
//!
//! Files are UTF-8 lines of `key = value` with `#` comments. Keys are
//! dotted (`sfas.k`, `lora.rank`, `model.dim`). Unknown keys are rejected
//! so typos fail loudly instead of silently training with a default. The
//! resolved configuration serializes canonically, and its hash identifies a
//! run for checkpoint reuse.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use wpft_core::error::{Error, Result};
use wpft_core::peft::Method;
use wpft_core::tasks::TaskId;

/// Backbone dimensions for the toy model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub patch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskId,
    pub method: Method,
    pub seed: u64,
    /// Directory holding `source/` and `target/` dataset subdirectories.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Checkpoint that fine-tuning starts from. `pretrain` ignores it.
    pub pretrained: Option<PathBuf>,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub model: ModelDims,
    pub sfas_k: f64,
    pub sfas_gamma: f64,
    pub tadp_prompt_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub vpt_len: usize,
    pub adapter_ratio: f64,
    /// Extra weight on the first output channel's loss; 1.0 disables it.
    pub surface_weight: f64,
}

/// Task-dependent defaults: training length, learning rate, and generated
/// prompt length.
fn task_defaults(task: TaskId) -> (usize, f64, usize) {
    match task {
        TaskId::Downscale => (30, 7e-4, 30),
        TaskId::Ensemble => (10, 1e-3, 5),
        TaskId::Precip => (15, 3e-3, 20),
    }
}

struct KeyBag {
    values: BTreeMap<String, String>,
    used: std::collections::HashSet<String>,
}

impl KeyBag {
    fn parse(text: &str) -> Result<KeyBag> {
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: '{trimmed}' is not 'key = value'", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::config(format!("line {}: empty key", lineno + 1)));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::config(format!("duplicate key '{key}'")));
            }
        }
        Ok(KeyBag { values, used: Default::default() })
    }

    fn get(&mut self, key: &str) -> Option<&str> {
        if self.values.contains_key(key) {
            self.used.insert(key.to_string());
            self.values.get(key).map(|s| s.as_str())
        } else {
            None
        }
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(format!("'{key}' has non-numeric value '{v}'"))),
        }
    }

    fn finish(self) -> Result<()> {
        let unknown: Vec<&String> =
            self.values.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "unknown key(s): {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<ExperimentConfig> {
        let mut bag = KeyBag::parse(text)?;
        let task = TaskId::parse(
            bag.get("task")
                .ok_or_else(|| Error::config("missing required key 'task'"))?,
        )?;
        let method = match bag.get("method") {
            Some(m) => Method::parse(m)?,
            None => Method::Full,
        };
        let (epochs_default, lr_default, prompt_default) = task_defaults(task);
        let seed = bag.num("seed", 0u64)?;
        let data_dir = PathBuf::from(
            bag.get("data").map(str::to_string).unwrap_or_else(|| format!("data/{}", task.id())),
        );
        let out_dir = PathBuf::from(bag.get("out").map(str::to_string).unwrap_or_else(|| {
            format!("runs/{}-{}-s{}", task.id(), method.id(), seed)
        }));
        let pretrained = bag.get("pretrained").map(PathBuf::from);
        let cfg = ExperimentConfig {
            task,
            method,
            seed,
            data_dir,
            out_dir,
            pretrained,
            epochs: bag.num("epochs", epochs_default)?,
            batch_size: bag.num("batch_size", 8usize)?,
            base_lr: bag.num("base_lr", lr_default)?,
            warmup_epochs: bag.num("warmup_epochs", 3usize)?,
            weight_decay: bag.num("weight_decay", 0.05f64)?,
            model: ModelDims {
                dim: bag.num("model.dim", 64usize)?,
                depth: bag.num("model.depth", 4usize)?,
                heads: bag.num("model.heads", 4usize)?,
                patch: bag.num("model.patch", 4usize)?,
            },
            sfas_k: bag.num("sfas.k", 0.001f64)?,
            sfas_gamma: bag.num("sfas.gamma", 0.2f64)?,
            tadp_prompt_len: bag.num("tadp.prompt_len", prompt_default)?,
            lora_rank: bag.num("lora.rank", 8usize)?,
            lora_alpha: bag.num("lora.alpha", 1.0f64)?,
            vpt_len: bag.num("vpt.len", 50usize)?,
            adapter_ratio: bag.num("adapter.ratio", 0.25f64)?,
            surface_weight: bag.num("loss.surface_weight", 1.0f64)?,
        };
        bag.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::config("base_lr must be positive"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::config(format!(
                "warmup_epochs {} must be below epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.sfas_k > 0.0 && self.sfas_k <= 1.0) {
            return Err(Error::config("sfas.k must lie in (0, 1]"));
        }
        if self.sfas_gamma < 0.0 {
            return Err(Error::config("sfas.gamma must be nonnegative"));
        }
        if self.surface_weight < 0.0 {
            return Err(Error::config("loss.surface_weight must be nonnegative"));
        }
        Ok(())
    }

    /// Dataset directory for one regime.
    pub fn dataset_dir(&self, regime: wpft_core::tasks::Regime) -> PathBuf {
        self.data_dir.join(regime.id())
    }

    /// Canonical serialized form: every resolved key, sorted, one per line.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("adapter.ratio", self.adapter_ratio.to_string());
        put("base_lr", self.base_lr.to_string());
        put("batch_size", self.batch_size.to_string());
        put("data", self.data_dir.display().to_string());
        put("epochs", self.epochs.to_string());
        put("lora.alpha", self.lora_alpha.to_string());
        put("lora.rank", self.lora_rank.to_string());
        put("loss.surface_weight", self.surface_weight.to_string());
        put("method", self.method.id().to_string());
        put("model.depth", self.model.depth.to_string());
        put("model.dim", self.model.dim.to_string());
        put("model.heads", self.model.heads.to_string());
        put("model.patch", self.model.patch.to_string());
        put("out", self.out_dir.display().to_string());
        put(
            "pretrained",
            self.pretrained
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        put("seed", self.seed.to_string());
        put("sfas.gamma", self.sfas_gamma.to_string());
        put("sfas.k", self.sfas_k.to_string());
        put("tadp.prompt_len", self.tadp_prompt_len.to_string());
        put("task", self.task.id().to_string());
        put("vpt.len", self.vpt_len.to_string());
        put("warmup_epochs", self.warmup_epochs.to_string());
        put("weight_decay", self.weight_decay.to_string());
        s
    }

    /// Hex digest identifying this exact configuration.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical().as_bytes());
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_resolves_task_defaults() {
        let c = ExperimentConfig::from_str("task = downscale\n").unwrap();
        assert_eq!(c.task, TaskId::Downscale);
        assert_eq!(c.method, Method::Full);
        assert_eq!(c.epochs, 30);
        assert!((c.base_lr - 7e-4).abs() < 1e-15);
        assert_eq!(c.tadp_prompt_len, 30);
        assert_eq!(c.warmup_epochs, 3);
        assert!((c.weight_decay - 0.05).abs() < 1e-15);
        let e = ExperimentConfig::from_str("task = ensemble\n").unwrap();
        assert_eq!(e.epochs, 10);
        assert!((e.base_lr - 1e-3).abs() < 1e-15);
        assert_eq!(e.tadp_prompt_len, 5);
        let p = ExperimentConfig::from_str("task = precip\n").unwrap();
        assert_eq!(p.epochs, 15);
        assert!((p.base_lr - 3e-3).abs() < 1e-15);
        assert_eq!(p.tadp_prompt_len, 20);
    }

    #[test]
    fn comments_blank_lines_and_dotted_keys_parse() {
        let text = "\n# an experiment\ntask = precip\nmethod = weatherpeft\n\nsfas.k = 0.05\nlora.rank = 4\nmodel.dim = 32\n";
        let c = ExperimentConfig::from_str(text).unwrap();
        assert_eq!(c.method, Method::Weatherpeft);
        assert!((c.sfas_k - 0.05).abs() < 1e-15);
        assert_eq!(c.lora_rank, 4);
        assert_eq!(c.model.dim, 32);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_str("task = downscale\nsfas.kk = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("sfas.kk"));
    }

    #[test]
    fn missing_task_and_bad_values_are_config_errors() {
        assert!(ExperimentConfig::from_str("method = full\n").is_err());
        assert!(ExperimentConfig::from_str("task = downscale\nepochs = many\n").is_err());
        assert!(ExperimentConfig::from_str("task = downscale\nepochs = 0\n").is_err());
        assert!(ExperimentConfig::from_str("task = downscale\nepochs = 2\n").is_err());
        assert!(ExperimentConfig::from_str("task = nowhere\n").is_err());
        assert!(ExperimentConfig::from_str("task = downscale\ntask = precip\n").is_err());
        assert!(ExperimentConfig::from_str("task downscale\n").is_err());
    }

    #[test]
    fn hash_tracks_content_not_formatting() {
        let a = ExperimentConfig::from_str("task = downscale\nseed = 1\n").unwrap();
        let b = ExperimentConfig::from_str("# hi\nseed = 1\ntask = downscale\n").unwrap();
        let c = ExperimentConfig::from_str("task = downscale\nseed = 2\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
