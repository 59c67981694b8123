use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{ImportanceConfig, SaliencyOptions, SCALP_SIGMA, SCALP_SIZE};
use crate::datagen::{GeneratorConfig, Split};
use crate::error::{Error, Result};
use crate::joint::TrainConfig;
use crate::signal::PrepConfig;

/// Which dataset rows the analysis commands visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSelection {
    pub split: Split,
    pub max_pairs: usize,
    pub class: Option<usize>,
}

impl Default for PairSelection {
    fn default() -> Self {
        Self { split: Split::Test, max_pairs: 50, class: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalpConfig {
    pub size: usize,
    pub sigma: f64,
    /// Layout CSV (`name,x,y,group`); the built-in 128-electrode cap if unset.
    pub layout: Option<PathBuf>,
}

impl Default for ScalpConfig {
    fn default() -> Self {
        Self { size: SCALP_SIZE, sigma: SCALP_SIGMA, layout: None }
    }
}

/// Everything one run needs. Loaded from `--config`, then overridden by
/// command-line flags; the resolved form is written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed, copied into every component seed.
    pub seed: u64,
    pub jobs: usize,
    #[serde(skip_serializing)]
    pub data_dir: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub checkpoint: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub prep: PrepConfig,
    pub train: TrainConfig,
    pub saliency: SaliencyOptions,
    pub importance: ImportanceConfig,
    pub pairs: PairSelection,
    pub metrics_splits: usize,
    pub scalp: ScalpConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            data_dir: None,
            out: None,
            checkpoint: None,
            generator: GeneratorConfig::default(),
            prep: PrepConfig::default(),
            train: TrainConfig::default(),
            saliency: SaliencyOptions::default(),
            importance: ImportanceConfig::default(),
            pairs: PairSelection::default(),
            metrics_splits: 10,
            scalp: ScalpConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Propagates the global seed and checks every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.generator.seed = self.seed;
        self.train.seed = self.seed;
        self.importance.seed = self.seed;
        self.generator.validate()?;
        self.train.validate()?;
        self.saliency.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.importance.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.metrics_splits == 0 || self.pairs.max_pairs == 0 {
            return Err(Error::Config("metrics_splits and pairs.max_pairs must be positive".into()));
        }
        Ok(self)
    }
}
