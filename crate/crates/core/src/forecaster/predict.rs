//! Weekly point forecasts and the forecast CSV.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::train::EnsemblePredictor;
use crate::dataset::{model_input, EpidemicPanel, LocationIndex};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const FORECAST_COLUMNS: [&str; 4] = ["anchor_date", "fips", "horizon_weeks", "point"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub anchor_date: NaiveDate,
    pub fips: String,
    pub horizon_weeks: usize,
    pub point: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForecastTable {
    pub config_hash: Option<String>,
    pub rows: Vec<ForecastRow>,
}

impl ForecastTable {
    /// `M × L_a` case-count forecasts (rows follow `index`) for one anchor.
    pub fn from_matrix(anchor_date: NaiveDate, index: &LocationIndex, y: &Matrix) -> Result<Self> {
        if y.rows() != index.n_counties() {
            return Err(Error::shape(
                "ForecastTable",
                format!("{} forecast rows for {} counties", y.rows(), index.n_counties()),
            ));
        }
        let mut rows = Vec::with_capacity(y.len());
        for (i, fips) in index.county_ids.iter().enumerate() {
            for h in 0..y.cols() {
                rows.push(ForecastRow {
                    anchor_date,
                    fips: fips.clone(),
                    horizon_weeks: h + 1,
                    point: y[(i, h)],
                });
            }
        }
        Ok(Self {
            config_hash: None,
            rows,
        })
    }

    pub fn anchors(&self) -> Vec<NaiveDate> {
        let mut a: Vec<NaiveDate> = self.rows.iter().map(|r| r.anchor_date).collect();
        a.sort_unstable();
        a.dedup();
        a
    }

    pub fn extend(&mut self, other: ForecastTable) {
        if self.config_hash.is_none() {
            self.config_hash = other.config_hash;
        }
        self.rows.extend(other.rows);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        if let Some(h) = &self.config_hash {
            writeln!(file, "# config_hash: {h}")?;
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record(FORECAST_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.anchor_date.to_string(),
                r.fips.clone(),
                r.horizon_weeks.to_string(),
                r.point.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config_hash = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# config_hash: "))
            .map(|h| h.trim().to_string());
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != FORECAST_COLUMNS {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                message: format!("expected columns {FORECAST_COLUMNS:?}, found {headers:?}"),
            });
        }
        let mut rows = Vec::new();
        for rec in rdr.deserialize() {
            rows.push(rec?);
        }
        Ok(Self { config_hash, rows })
    }
}

/// Forecasts for the anchor date: per-capita model output converted back
/// to case counts (when the panel is normalised) and clamped at zero.
pub fn predict(
    panel: &EpidemicPanel,
    predictor: &EnsemblePredictor,
    index: &LocationIndex,
    anchor_date: NaiveDate,
) -> Result<ForecastTable> {
    let anchor = panel
        .date_position(anchor_date)
        .ok_or_else(|| Error::Range(format!("anchor {anchor_date} outside the panel")))?;
    let input = model_input(panel, anchor, predictor.dims.lookback)?;
    let y = predictor.forecast(&input)?;
    let y = to_case_counts(&y, panel, index)?;
    ForecastTable::from_matrix(anchor_date, index, &y.map(|v| v.max(0.0)))
}

/// Converts county-by-horizon values from panel units to case counts.
pub fn to_case_counts(y: &Matrix, panel: &EpidemicPanel, index: &LocationIndex) -> Result<Matrix> {
    if !panel.normalized {
        return Ok(y.clone());
    }
    let scale = panel
        .per_capita_scale
        .ok_or_else(|| Error::State("normalized panel without a per-capita scale".into()))?;
    if y.rows() != index.n_counties() {
        return Err(Error::Index("forecast rows do not match the location index".into()));
    }
    Ok(Matrix::from_fn(y.rows(), y.cols(), |i, h| {
        y[(i, h)] * index.county_population[i] as f64 / scale
    }))
}
