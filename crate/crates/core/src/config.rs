//! JSON run configuration with dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::AugmentConfig;
use crate::error::{io_err, Error, Result};
use crate::losses::LossWeights;
use crate::network::NetworkConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseMode {
    /// Relative poses come from the pose network.
    Learned,
    /// Ground-truth relative poses; the pose network is never run.
    KnownPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dataset: Option<PathBuf>,
    /// Checkpoints, `train.csv` and the archived config go here.
    pub out_dir: PathBuf,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub batch_size: usize,
    pub steps: u64,
    pub checkpoint_every: u64,
    pub pose_mode: PoseMode,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: None,
            out_dir: PathBuf::from("runs/default"),
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 4,
            steps: 2000,
            checkpoint_every: 500,
            pose_mode: PoseMode::Learned,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub dataset: Option<PathBuf>,
    pub batch_size: usize,
    /// Where `metrics.csv` is written; defaults to the training `out_dir`.
    pub out_dir: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            dataset: None,
            batch_size: 4,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: NetworkConfig,
    pub loss: LossWeights,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Parses a JSON document, then applies `key=value` overrides.
    pub fn from_json_str(text: &str, source: &Path, overrides: &[String]) -> Result<RunConfig> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Json {
            path: source.to_path_buf(),
            msg: e.to_string(),
        })?;
        if !value.is_object() {
            return Err(Error::Config(format!(
                "{}: top level must be a JSON object",
                source.display()
            )));
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("{}: {e}", source.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json_str(&text, path, overrides)
    }

    /// Defaults plus overrides, without a file.
    pub fn from_overrides(overrides: &[String]) -> Result<RunConfig> {
        Self::from_json_str("{}", Path::new("<defaults>"), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let t = &self.train;
        if !(t.lr > 0.0) || !t.lr.is_finite() {
            return Err(Error::Config(format!(
                "train.lr must be positive, got {}",
                t.lr
            )));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.eps > 0.0) {
            return Err(Error::Config(
                "train.beta1/beta2 must lie in [0, 1) and train.eps be positive".into(),
            ));
        }
        if t.batch_size == 0 || self.eval.batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if t.checkpoint_every == 0 {
            return Err(Error::Config(
                "train.checkpoint_every must be at least 1".into(),
            ));
        }
        let a = &self.augment;
        if !(0.0..=1.0).contains(&a.flip_prob)
            || [a.brightness, a.contrast, a.saturation]
                .iter()
                .any(|v| !(0.0..1.0).contains(v))
        {
            return Err(Error::Config(format!("augment values out of range: {a:?}")));
        }
        Ok(())
    }

    /// Training dataset path, or a config error naming the key.
    pub fn train_dataset(&self) -> Result<&Path> {
        self.train
            .dataset
            .as_deref()
            .ok_or_else(|| Error::Config("missing required key `train.dataset`".into()))
    }

    pub fn eval_dataset(&self) -> Result<&Path> {
        self.eval
            .dataset
            .as_deref()
            .ok_or_else(|| Error::Config("missing required key `eval.dataset`".into()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sets `a.b.c=value` inside `root`. The key must exist in the defaults;
/// the value is parsed as JSON and falls back to a plain string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let defaults = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    let mut schema = &defaults;
    for p in &parts {
        schema = schema
            .get(p)
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
    }
    let parsed =
        serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!("cannot override `{key}`: `{p}` is not an object"))
        })?;
        node = obj
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("cannot override `{key}`")))?
        .insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
