//! TOML configuration file with one optional section per command.

use std::path::{Path, PathBuf};

use sceneflow_core::sandbox::SceneSpec;
use sceneflow_core::training::TrainConfig;
use sceneflow_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub deterministic: Option<bool>,
    pub generate: GenerateSection,
    pub data: DataSection,
    pub train: TrainConfig,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    /// Training plus validation pairs.
    pub count: usize,
    pub val_fraction: f64,
    pub test_count: usize,
    /// `correspondence`, `resampling` or `both`; overrides `scene.mechanism` when set.
    pub mechanism: Option<String>,
    pub scene: SceneSpec,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            count: 100,
            val_fraction: 0.1,
            test_count: 0,
            mechanism: None,
            scene: SceneSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub correspondence: Option<PathBuf>,
    pub resampling: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| {
            Error::config(format!("{}: {}", path.display(), e.message()))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg: FileConfig = toml::from_str(
            "seed = 4\n[train]\nepochs = 3\n[train.loss]\nlambda_cc = 0.5\n[generate.scene]\npoints_per_cloud = 64\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(4));
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.loss.lambda_cc, 0.5);
        assert_eq!(cfg.train.lr_flow, 5e-4);
        assert_eq!(cfg.generate.scene.points_per_cloud, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("sede = 1").is_err());
    }
}
