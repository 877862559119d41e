//! JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use diws_core::data::{generate_synthetic, Dataset, SyntheticSpec};
use diws_core::error::Error as CoreError;
use diws_core::metrics::ScratchConfig;
use diws_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::csv_io::load_csv;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    /// Relative paths are resolved against the config file's directory.
    Csv(PathBuf),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec::default())
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic(spec) => Ok(generate_synthetic(spec)?),
            DatasetSource::Csv(path) => load_csv(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Architectures trained one after another by `compare-pd`.
    pub pd_archs: usize,
    pub pd_steps_per_arch: usize,
    /// Architectures evaluated after every epoch by `ktau`.
    pub tracked_archs: usize,
    pub ktau_interval: usize,
    pub gt_archs: usize,
    pub scratch: ScratchConfig,
    /// Output-change threshold reported by `compare-pd`.
    pub gamma: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            pd_archs: 10,
            pd_steps_per_arch: 50,
            tracked_archs: 64,
            ktau_interval: 13,
            gt_archs: 16,
            scratch: ScratchConfig::default(),
            gamma: 0.1,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> diws_core::Result<()> {
        if self.pd_archs == 0 || self.tracked_archs < 2 || self.gt_archs < 2 {
            return Err(CoreError::Config("pd_archs must be positive; tracked_archs and gt_archs at least 2".into()));
        }
        if self.ktau_interval == 0 {
            return Err(CoreError::Config("ktau_interval must be at least 1".into()));
        }
        if self.scratch.batch_size == 0 || !(self.scratch.eta > 0.0 && self.scratch.eta.is_finite()) {
            return Err(CoreError::Config("scratch batch_size and eta must be positive".into()));
        }
        diws_core::metrics::DisturbanceBudget::new(self.gamma)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| HarnessError::json(origin, e))?;
        if let DatasetSource::Csv(path) = &mut cfg.dataset {
            if path.is_relative() {
                if let Some(dir) = origin.parent() {
                    *path = dir.join(&*path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        self.train.validate()?;
        self.metrics.validate()?;
        Ok(())
    }
}
