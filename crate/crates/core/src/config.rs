//! Experiment configuration file (TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{SceneDataset, SynthSpec};
use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::metrics::EvalConfig;
use crate::render::RenderConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Dataset directory (manifest plus images and masks).
    pub dataset: PathBuf,
    /// Directory for checkpoints, logs, reports and renders.
    pub output: PathBuf,
    /// Replace the field bounding box with the dataset's `aabb`.
    pub fit_bbox_to_dataset: bool,
    pub train: TrainConfig,
    pub field: FieldConfig,
    pub render: RenderConfig,
    pub eval: EvalConfig,
    pub synth: SynthSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::from("data/scene"),
            output: PathBuf::from("runs/default"),
            fit_bbox_to_dataset: true,
            train: TrainConfig::default(),
            field: FieldConfig::default(),
            render: RenderConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl ExperimentConfig {
    /// Small network and batch sizes that train the 64 x 64 synthetic scenes
    /// in a few minutes on one CPU core.
    pub fn desk() -> Self {
        let mut c = ExperimentConfig::default();
        c.field.resolution = 64;
        c.field.channels = 8;
        c.field.density_hidden = vec![32];
        c.field.color_hidden = vec![32];
        c.render.near = 1.6;
        c.render.far = 4.4;
        c.render.samples_per_ray = 64;
        c.train.steps = 3000;
        c.train.rays_per_batch = 1024;
        c.train.log_every = 250;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.field.validate()?;
        self.render.validate()?;
        self.synth.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Field configuration for `dataset`, honoring `fit_bbox_to_dataset`.
    pub fn field_for(&self, dataset: &SceneDataset) -> FieldConfig {
        let mut f = self.field.clone();
        if self.fit_bbox_to_dataset {
            f.bbox_min = dataset.aabb.min;
            f.bbox_max = dataset.aabb.max;
        }
        f
    }
}
