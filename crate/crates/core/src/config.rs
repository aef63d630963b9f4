//! Whole-pipeline configuration and `key.path=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::body::SampleConfig;
use crate::error::{Error, Result};
use crate::prior::GmmFitConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub seed: u64,
    pub template_seed: u64,
    pub train_count: usize,
    /// Held-out samples drawn after the training ones from the same stream.
    pub eval_count: usize,
    #[serde(flatten)]
    pub sample: SampleConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            template_seed: 0,
            train_count: 64,
            eval_count: 16,
            sample: SampleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Number of posed meshes the prior is fit on. These are drawn from
    /// their own pose stream and never coincide with training samples.
    pub meshes: usize,
    pub pose_seed: u64,
    #[serde(flatten)]
    pub gmm: GmmFitConfig,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            meshes: 500,
            pose_seed: 2,
            gmm: GmmFitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub prior: PriorConfig,
    pub train: TrainConfig,
}

impl PipelineConfig {
    /// Sets image, network input and renderer resolution together.
    pub fn at_resolution(mut self, height: usize, width: usize) -> Self {
        self.data.sample.height = height;
        self.data.sample.width = width;
        self.train.net.height = height;
        self.train.net.width = width;
        self.train.render.height = height;
        self.train.render.width = width;
        self
    }

    /// Derives every stage's seed from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.prior.pose_seed = seed.wrapping_add(1);
        self.prior.gmm.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.data.sample;
        let n = &self.train.net;
        let r = &self.train.render;
        if (s.height, s.width) != (n.height, n.width) || (s.height, s.width) != (r.height, r.width) {
            return Err(Error::Invalid(format!(
                "resolution mismatch: data {}x{}, net {}x{}, render {}x{}",
                s.height, s.width, n.height, n.width, r.height, r.width
            )));
        }
        n.validate()?;
        r.validate()?;
        if self.data.train_count == 0 {
            return Err(Error::Invalid("data.train_count must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
    }

    /// Applies `a.b.c=value` overrides. Values parse as JSON, falling back to
    /// a plain string. Keys must already exist in the configuration.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        for o in overrides {
            apply_override(&mut value, o.as_ref())?;
        }
        let out: Self = serde_json::from_value(value).map_err(|e| Error::Invalid(format!("override: {e}")))?;
        Ok(out)
    }
}

pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Invalid(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Invalid(format!("override {assignment:?} has an empty key")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| Error::Invalid(format!("unknown config key {key:?}")))?;
    }
    *node = parsed;
    Ok(())
}
