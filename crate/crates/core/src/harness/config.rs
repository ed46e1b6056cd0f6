use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::network::{NetworkConfig, TrainSchedule};
use crate::{Error, Result};

/// Everything a training run needs, stored as TOML. Relative paths are
/// resolved against the directory of the file they were read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Manifest of the training scenes.
    pub train_data: PathBuf,
    pub output_dir: PathBuf,
    pub network: NetworkConfig,
    pub schedule: TrainSchedule,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Reads and validates a config file, resolving relative paths.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.train_data = base.join(&cfg.train_data);
        cfg.output_dir = base.join(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.schedule.validate()?;
        let w = &self.schedule.width;
        if w.base_width != self.network.hidden_width || w.width_factor != self.network.width_factor {
            return Err(Error::InvalidConfig("schedule width must match network hidden_width and width_factor".into()));
        }
        Ok(())
    }

    /// Desk-scale defaults: K = 9 with 3,3,3 group divisions, s = 0.4, p = 0.3,
    /// w = 1.8, sorting every sixth adaptation.
    pub fn desk_default() -> Self {
        use crate::cws::WidthConfig;
        use crate::sds::SparsityConfig;
        let hidden_width = 8;
        Self {
            seed: 7,
            train_data: PathBuf::from("data/train/manifest.toml"),
            output_dir: PathBuf::from("runs/desk"),
            network: NetworkConfig {
                voxel_size: 0.05,
                in_feats: 2,
                hidden_width,
                width_factor: 1.8,
                kernel_size: 9,
                group_divisions: vec![3, 3, 3],
                num_blocks: 2,
                num_classes: 3,
                class_weights: vec![1.0, 1.0, 1.0],
                scales: vec![1],
            },
            schedule: TrainSchedule {
                iterations: 2000,
                sparsity: SparsityConfig { sparsity: 0.4, prune_rate: 0.3, adapt_every: 50, seed: 11 },
                width: WidthConfig { base_width: hidden_width, width_factor: 1.8, sort_every: 300 },
                peak_lr: 5e-3,
                weight_decay: 0.01,
                batch_size: 1,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = RunConfig::desk_default();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn parse_errors_are_config_errors() {
        assert!(matches!(RunConfig::parse("seed = "), Err(Error::InvalidConfig(_))));
        let mut cfg = RunConfig::desk_default();
        cfg.schedule.width.sort_every = 75;
        assert!(matches!(RunConfig::parse(&cfg.to_toml().unwrap()), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, RunConfig::desk_default().to_toml().unwrap()).unwrap();
        let cfg = RunConfig::from_path(&path).unwrap();
        assert_eq!(cfg.train_data, dir.path().join("data/train/manifest.toml"));
    }
}
