//! Run configuration, stored as TOML.
//!
//! ```toml
//! dataset = "data/jsb_chorales.json"
//! out_dir = "runs/cp30"
//!
//! [model]
//! kind = "cp"
//! input_size = 64
//! hidden_size = 64
//! m_dims = [4, 4, 4]
//! n_dims = [4, 4, 4]
//! ranks = [30]
//!
//! [train]
//! learning_rates = [1e-3]
//! dropouts = [0.2]
//! max_epochs = 50
//! ```
//!
//! Omitted `[train]` keys take the [`TrainConfig`] defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Use only the first `train_limit` training sequences.
    pub train_limit: Option<usize>,
    /// Rank specifications swept by the `gridsearch` command; empty means
    /// just `model.ranks`.
    #[serde(default)]
    pub rank_grid: Vec<Vec<usize>>,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        for ranks in &self.rank_grid {
            ModelSpec {
                ranks: ranks.clone(),
                ..self.model.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    /// Model specifications for every entry of the rank grid.
    pub fn grid_specs(&self) -> Vec<ModelSpec> {
        if self.rank_grid.is_empty() {
            return vec![self.model.clone()];
        }
        self.rank_grid
            .iter()
            .map(|r| ModelSpec {
                ranks: r.clone(),
                ..self.model.clone()
            })
            .collect()
    }
}
