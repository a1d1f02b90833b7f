//! Run configuration: one TOML file with a section per pipeline stage.
//! Unknown keys are rejected so a config file is a complete record of a run.

use std::path::{Path, PathBuf};

use elastolab_core::mmdi::MmdiConfig;
use elastolab_core::patch::PatchConfig;
use elastolab_core::phantom::PhantomConfig;
use elastolab_core::wavesolve::SolverConfig;
use elastolab_dimenet::{TrainConfig, UNetConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub network: UNetConfig,
    pub optimizer: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Train, validation and test fractions of the source fields.
    pub split: [f64; 3],
    /// Split homogeneous-type and inclusion phantoms separately so both
    /// groups appear in every split in the same proportions.
    pub stratify: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { split: [0.8, 0.1, 0.1], stratify: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub phantom: PhantomConfig,
    pub solver: SolverConfig,
    pub mmdi: MmdiConfig,
    pub patch: PatchConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            phantom: PhantomConfig::default(),
            solver: SolverConfig::default(),
            mmdi: MmdiConfig::default(),
            patch: PatchConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = Self::from_toml(&text)
            .map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.solver.validate()?;
        self.mmdi.filter.validate()?;
        self.mmdi.inversion.validate()?;
        self.patch.validate()?;
        self.train.network.validate()?;
        self.train.optimizer.validate()?;
        let [a, b, c] = self.eval.split;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(CliError::validation(format!("split fractions {:?} must lie in [0, 1] and sum to 1", self.eval.split)));
        }
        Ok(())
    }

    /// SHA-256 of the configuration with the output directory left out, so
    /// the same experiment hashes identically wherever it is written.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { out: PathBuf::new(), ..self.clone() };
        let json = serde_json::to_vec(&canonical).expect("config serializes to JSON");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("seed = 1\nbogus = 2\n").is_err());
        assert!(RunConfig::from_toml("[train.optimizer]\nlearning_rate = 0.1\n").is_err());
        assert!(RunConfig::from_toml("[patch]\ninfer_stride = 5\n").is_ok());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\n[train.network]\nbase_channels = 8\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.network.base_channels, 8);
        assert_eq!(cfg.train.network.levels, 4);
        assert_eq!(cfg.patch, PatchConfig::default());
    }

    #[test]
    fn hash_ignores_output_directory_only() {
        let a = RunConfig::default();
        let b = RunConfig { out: PathBuf::from("elsewhere"), ..a.clone() };
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn split_must_sum_to_one() {
        let mut cfg = RunConfig::default();
        cfg.eval.split = [0.5, 0.1, 0.1];
        assert!(cfg.validate().is_err());
        cfg.eval.split = [0.7, 0.1, 0.2];
        assert!(cfg.validate().is_ok());
    }
}
