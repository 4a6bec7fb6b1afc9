//! Declarative run configuration (TOML) and its content hash.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::PanelSources;
use crate::error::{Error, Result};
use crate::forecaster::TrainConfig;
use crate::params::ModelDims;
use crate::synthetic::DeskScenarioConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Raw inputs for `ingest`; unused by the other commands.
    pub sources: Option<PanelSources>,
    /// First day of the panel.
    pub start: NaiveDate,
    /// Day after the last day of the panel.
    pub end: NaiveDate,
    /// Panel cache directory; relative paths resolve against the output
    /// directory.
    pub panel_dir: PathBuf,
    /// Cases per this many residents after population normalization.
    pub per_capita_scale: f64,
    /// Train only on dates up to and including this day.
    pub train_end: Option<NaiveDate>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let range = crate::dataset::jhu::DateRange::default();
        Self {
            sources: None,
            start: range.start,
            end: range.end,
            panel_dir: PathBuf::from("panel"),
            per_capita_scale: 1e5,
            train_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// First and last anchor Sunday scored. When unset, `predict` forecasts
    /// the last `last_weeks` feasible anchors and `evaluate` scores every
    /// anchor present in the forecast file.
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub last_weeks: usize,
    /// Sizes of the most-populous-county subsets (`@k`).
    pub subsets: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            start: None,
            end: None,
            last_weeks: 6,
            subsets: vec![100, 500],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub synth: DeskScenarioConfig,
    pub model: ModelDims,
    pub train: TrainConfig,
    pub evaluation: EvalConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.start >= self.data.end {
            return Err(Error::Config(format!("empty data range {}..{}", self.data.start, self.data.end)));
        }
        if !(self.data.per_capita_scale > 0.0) {
            return Err(Error::Config("per_capita_scale must be positive".into()));
        }
        if let (Some(a), Some(b)) = (self.evaluation.start, self.evaluation.end) {
            if a > b {
                return Err(Error::Config(format!("evaluation range {a}..={b} is reversed")));
            }
        }
        if self.evaluation.subsets.contains(&0) {
            return Err(Error::Config("subset size 0".into()));
        }
        Ok(())
    }

    /// Sets the seed list to `seed, seed + 1, …` keeping its length, and
    /// uses `seed` for the synthetic scenario.
    pub fn with_seed(mut self, seed: u64) -> Self {
        let n = self.train.seeds.len().max(1) as u64;
        self.train.seeds = (seed..seed + n).collect();
        self
    }

    /// Canonical TOML rendering of every field, defaults included.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical rendering.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["bogus = 1", "[train]\nlearning_rate = 0.1", "[model]\nrepr_dim = 3"] {
            assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Toml(_))), "{text}");
        }
    }

    #[test]
    fn hash_tracks_content_only() {
        let a = RunConfig::default();
        let b = RunConfig::from_toml_str("[train]\nlr = 0.001\n").unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = RunConfig::from_toml_str("[train]\nlr = 0.002\n").unwrap();
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn canonical_rendering_round_trips() {
        let mut cfg = RunConfig::default().with_seed(7);
        cfg.evaluation.start = NaiveDate::from_ymd_opt(2021, 2, 7);
        let again = RunConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(cfg.train.seeds, vec![7, 8, 9]);
    }
}
