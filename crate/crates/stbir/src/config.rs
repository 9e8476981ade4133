//! Run configuration: flat key-value config files with dotted keys mirroring
//! each module's config surface. Unknown keys are rejected and validation
//! failures are collected exhaustively before exit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::datamodel::SynthConfig;
use crate::error::{Result, StbirError};
use crate::mcfa::PipelineConfig;

/// Everything a command needs: dataset source, split, and pipeline settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// When set, load the dataset from this manifest instead of synthesizing.
    pub manifest: Option<PathBuf>,
    pub synth: SynthConfig,
    pub test_fraction: f64,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            synth: SynthConfig::default(),
            test_fraction: 0.25,
            pipeline: PipelineConfig::default(),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "dataset.manifest",
    "split.test_fraction",
    "synth.num_categories",
    "synth.instances_per_category",
    "synth.latent_struct_dim",
    "synth.latent_app_dim",
    "synth.view_dim_sketch",
    "synth.view_dim_text",
    "synth.view_dim_image",
    "synth.intra_class_spread",
    "synth.view_noise_std",
    "synth.seed",
    "mcfa.order",
    "mcfa.epochs_per_stage",
    "mcfa.staged",
    "batch_size",
    "seed",
    "encoder.hidden_dim",
    "encoder.embed_dim",
    "cldre.alpha",
    "cldre.enabled",
    "ckfso.s",
    "ckfso.m",
    "ckfso.enabled",
    "loss.lambda1",
    "loss.lambda2",
    "loss.lambda3",
    "loss.temperature",
    "loss.triplet_margin",
    "optimizer.learning_rate",
    "optimizer.weight_decay",
    "optimizer.beta1",
    "optimizer.beta2",
    "optimizer.eps",
    "query.use_sketch",
    "query.use_text",
];

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| StbirError::Parse {
            line: lineno + 1,
            msg: format!("expected 'key = value', got '{line}'"),
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

impl RunConfig {
    /// Loads a config file over the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::default();
        cfg.apply_kv(&parse_kv(&text)?)?;
        Ok(cfg)
    }

    /// Applies parsed key-value pairs; errors are collected and reported
    /// together.
    pub fn apply_kv(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        let mut errors = Vec::new();
        for (key, value) in map {
            if let Err(e) = self.apply_one(key, value) {
                errors.push(e.to_string());
            }
        }
        if let Err(e) = self.validate() {
            errors.push(e.to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(StbirError::Config(errors.join("; ")))
        }
    }

    fn apply_one(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(StbirError::Config(format!("unknown config key '{key}'")));
        }
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| StbirError::Config(format!("key '{key}': '{v}' is not a number")))
        };
        let int = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| StbirError::Config(format!("key '{key}': '{v}' is not an integer")))
        };
        let boolean = |v: &str| -> Result<bool> {
            v.parse::<bool>()
                .map_err(|_| StbirError::Config(format!("key '{key}': '{v}' is not a boolean")))
        };
        match key {
            "dataset.manifest" => self.manifest = Some(PathBuf::from(value)),
            "split.test_fraction" => self.test_fraction = num(value)?,
            "synth.num_categories" => self.synth.num_categories = int(value)?,
            "synth.instances_per_category" => self.synth.instances_per_category = int(value)?,
            "synth.latent_struct_dim" => self.synth.latent_struct_dim = int(value)?,
            "synth.latent_app_dim" => self.synth.latent_app_dim = int(value)?,
            "synth.view_dim_sketch" => self.synth.view_dims.0 = int(value)?,
            "synth.view_dim_text" => self.synth.view_dims.1 = int(value)?,
            "synth.view_dim_image" => self.synth.view_dims.2 = int(value)?,
            "synth.intra_class_spread" => self.synth.intra_class_spread = num(value)?,
            "synth.view_noise_std" => self.synth.view_noise_std = num(value)?,
            "synth.seed" => self.synth.seed = int(value)? as u64,
            "mcfa.order" => self.pipeline.order = value.to_string(),
            "mcfa.epochs_per_stage" => self.pipeline.epochs_per_stage = int(value)?,
            "mcfa.staged" => self.pipeline.staged = boolean(value)?,
            "batch_size" => self.pipeline.batch_size = int(value)?,
            "seed" => self.pipeline.seed = int(value)? as u64,
            "encoder.hidden_dim" => self.pipeline.hidden_dim = int(value)?,
            "encoder.embed_dim" => self.pipeline.embed_dim = int(value)?,
            "cldre.alpha" => self.pipeline.cldre_alpha = num(value)?,
            "cldre.enabled" => self.pipeline.cldre_enabled = boolean(value)?,
            "ckfso.s" => self.pipeline.aaml.s = num(value)?,
            "ckfso.m" => self.pipeline.aaml.m = num(value)?,
            "ckfso.enabled" => self.pipeline.ckfso_enabled = boolean(value)?,
            "loss.lambda1" => self.pipeline.weights.lambda1 = num(value)?,
            "loss.lambda2" => self.pipeline.weights.lambda2 = num(value)?,
            "loss.lambda3" => self.pipeline.weights.lambda3 = num(value)?,
            "loss.temperature" => self.pipeline.contrastive.temperature = num(value)?,
            "loss.triplet_margin" => self.pipeline.contrastive.triplet_margin = num(value)?,
            "optimizer.learning_rate" => self.pipeline.optimizer.learning_rate = num(value)?,
            "optimizer.weight_decay" => self.pipeline.optimizer.weight_decay = num(value)?,
            "optimizer.beta1" => self.pipeline.optimizer.beta1 = num(value)?,
            "optimizer.beta2" => self.pipeline.optimizer.beta2 = num(value)?,
            "optimizer.eps" => self.pipeline.optimizer.eps = num(value)?,
            "query.use_sketch" => self.pipeline.use_sketch = boolean(value)?,
            "query.use_text" => self.pipeline.use_text = boolean(value)?,
            _ => unreachable!("key checked against KNOWN_KEYS"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if let Err(e) = self.synth.validate() {
            errors.push(e.to_string());
        }
        if let Err(e) = self.pipeline.validate() {
            errors.push(e.to_string());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            errors.push(format!(
                "split.test_fraction must be in (0,1), got {}",
                self.test_fraction
            ));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(StbirError::Config(errors.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_file_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# run settings\nmcfa.order = IST\nckfso.m = 0.3\nbatch_size = 16\n",
        )
        .unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.pipeline.order, "IST");
        assert_eq!(cfg.pipeline.aaml.m, 0.3);
        assert_eq!(cfg.pipeline.batch_size, 16);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        let mut map = BTreeMap::new();
        map.insert("no.such.key".to_string(), "1".to_string());
        let err = cfg.apply_kv(&map).unwrap_err();
        assert!(err.to_string().contains("unknown config key"));
    }

    #[test]
    fn multiple_failures_reported_together() {
        let mut cfg = RunConfig::default();
        let mut map = BTreeMap::new();
        map.insert("batch_size".to_string(), "1".to_string());
        map.insert("ckfso.s".to_string(), "-3".to_string());
        let err = cfg.apply_kv(&map).unwrap_err().to_string();
        assert!(err.contains("batch_size"), "{err}");
        assert!(err.contains("s must be > 0"), "{err}");
    }
}
