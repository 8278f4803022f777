use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use neurogen_core::data::DatasetName;
use neurogen_core::devsim::SimConfig;
use neurogen_core::grn::{DEFAULT_K_MAX, DEFAULT_THETA};
use neurogen_core::model::{DEFAULT_BATCH, DEFAULT_LR};
use neurogen_core::seeds::derive_seed;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetName,
    /// Overrides `<data_root>/mnist` or `<data_root>/cifar-10-batches-bin`.
    pub data_dir: Option<PathBuf>,
    pub epochs: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Constant subtracted from every [0, 1] input feature.
    pub input_offset: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetName::Mnist,
            data_dir: None,
            epochs: 10,
            batch_size: DEFAULT_BATCH,
            lr: DEFAULT_LR,
            input_offset: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub expression: PathBuf,
    pub theta: f64,
    pub k_max: usize,
    pub data_root: PathBuf,
    pub sim: SimConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            expression: PathBuf::from("fixtures/expression.csv"),
            theta: DEFAULT_THETA,
            k_max: DEFAULT_K_MAX,
            data_root: PathBuf::from("data"),
            sim: SimConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn data_dir(&self, dataset: DatasetName) -> PathBuf {
        match (&self.train.data_dir, dataset) {
            (Some(dir), _) => dir.clone(),
            (None, DatasetName::Mnist) => self.data_root.join("mnist"),
            (None, DatasetName::Cifar10) => self.data_root.join("cifar-10-batches-bin"),
        }
    }
}

/// Per-concern seeds derived from the master seed. Development uses the
/// master seed itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub development: u64,
    pub init: u64,
    pub shuffle: u64,
    pub topology: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            master,
            development: master,
            init: derive_seed(master, 1),
            shuffle: derive_seed(master, 2),
            topology: derive_seed(master, 3),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_matches_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
        assert_eq!(ExperimentConfig::load(&path).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"seed": 7, "train": {"epochs": 2}}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.sim, SimConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sede": 7}"#).is_err());
    }

    #[test]
    fn seeds_are_split() {
        let s = Seeds::from_master(42);
        assert_eq!(s.development, 42);
        let all = [s.init, s.shuffle, s.topology];
        assert!(all.iter().all(|&x| x != 42));
        assert!(all[0] != all[1] && all[1] != all[2] && all[0] != all[2]);
    }
}
