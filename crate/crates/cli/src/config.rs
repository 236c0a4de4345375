use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use ogae_core::data::Experiment1Options;
use ogae_core::metrics::DEFAULT_RESAMPLES;
use ogae_core::pipeline::{Method, SearchGrid, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Directory holding the four MNIST IDX files.
    pub mnist_dir: PathBuf,
    pub experiment: Experiment1Options,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            mnist_dir: PathBuf::from("data/mnist"),
            experiment: Experiment1Options::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

/// Contents of the `--config` JSON file. Every field is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    /// Validation-set grid; an empty grid trains `train` as given.
    pub search: SearchGrid,
    pub methods: Vec<Method>,
    pub bootstrap: BootstrapConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            data: DataConfig::default(),
            train: TrainConfig::default(),
            search: SearchGrid::default(),
            methods: Method::ALL.to_vec(),
            bootstrap: BootstrapConfig::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(CliConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| crate::MissingInput(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    /// `--seed` replaces the model seed and the bootstrap seed; the data seed
    /// (corruption draws and split order) stays as configured.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            self.bootstrap.seed = s;
        }
        self
    }
}
