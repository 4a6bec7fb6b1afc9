//! Versioned JSON checkpoints. Floats are written with round-trip
//! precision so a reloaded model reproduces forecasts bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelContext, Variant};
use super::train::{EnsemblePredictor, Normalizer};
use crate::dataset::LocationIndex;
use crate::error::{Error, Result};
use crate::params::{ModelDims, ModelParams};

pub const CHECKPOINT_FORMAT: &str = "msgnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub variant: Variant,
    pub dims: ModelDims,
    pub normalizer: Normalizer,
    pub cutoff_km: f64,
    pub n_counties: usize,
    pub n_states: usize,
    pub seeds: Vec<u64>,
    pub members: Vec<ModelParams>,
}

impl Checkpoint {
    pub fn from_predictor(
        predictor: &EnsemblePredictor,
        seeds: &[u64],
        cutoff_km: f64,
        config_hash: &str,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.into(),
            variant: predictor.variant,
            dims: predictor.dims,
            normalizer: predictor.normalizer,
            cutoff_km,
            n_counties: predictor.ctx.n_counties(),
            n_states: predictor.ctx.n_states,
            seeds: seeds.to_vec(),
            members: predictor.members.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(file).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("unsupported checkpoint {} v{}", ck.format, ck.version),
            });
        }
        if ck.members.is_empty() || ck.members.iter().any(|m| !m.is_finite()) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "checkpoint holds no finite parameter set".into(),
            });
        }
        Ok(ck)
    }

    /// Rebuilds the predictor against `index`, which must match the
    /// location counts the model was trained with.
    pub fn predictor(&self, index: &LocationIndex) -> Result<EnsemblePredictor> {
        if index.n_counties() != self.n_counties || index.n_states() != self.n_states {
            return Err(Error::Index(format!(
                "checkpoint expects {}/{} counties/states, index has {}/{}",
                self.n_counties,
                self.n_states,
                index.n_counties(),
                index.n_states()
            )));
        }
        Ok(EnsemblePredictor {
            variant: self.variant,
            dims: self.dims,
            normalizer: self.normalizer,
            ctx: ModelContext::new(index, self.cutoff_km)?,
            members: self.members.clone(),
        })
    }
}
