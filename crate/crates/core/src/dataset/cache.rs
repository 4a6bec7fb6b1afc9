//! On-disk panel cache.
//!
//! A cache directory holds three files:
//!
//! * `panel.csv`: long format, one row per (location, date):
//!   `location_id,date,confirmed,deaths`. County ids are five-digit FIPS,
//!   state ids two-digit FIPS; dates are ISO-8601.
//! * `locations.csv`: `location_id,kind,state_id,name,population,lat,lon`
//!   with `kind` ∈ {`county`, `state`}, in index order.
//! * `manifest.json`: schema version, normalization flag and scale, date
//!   range, location counts, and the config hash of the producing run.

use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{EpidemicPanel, LocationIndex, SeriesBlock};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const PANEL_FILE: &str = "panel.csv";
pub const LOCATIONS_FILE: &str = "locations.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub normalized: bool,
    pub per_capita_scale: Option<f64>,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub n_counties: usize,
    pub n_states: usize,
    pub config_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct PanelRow {
    location_id: String,
    date: NaiveDate,
    confirmed: f64,
    deaths: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LocationRow {
    location_id: String,
    kind: String,
    state_id: String,
    name: String,
    population: u64,
    lat: f64,
    lon: f64,
}

pub fn write_panel_cache(
    dir: &Path,
    index: &LocationIndex,
    panel: &EpidemicPanel,
    config_hash: &str,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let (Some(&start_date), Some(&end_date)) = (panel.dates.first(), panel.dates.last()) else {
        return Err(Error::Range("cannot cache an empty panel".into()));
    };

    let mut w = csv::Writer::from_path(dir.join(PANEL_FILE))?;
    let mut emit = |ids: &[String], block: &SeriesBlock| -> Result<()> {
        for (i, id) in ids.iter().enumerate() {
            for (t, &date) in panel.dates.iter().enumerate() {
                w.serialize(PanelRow {
                    location_id: id.clone(),
                    date,
                    confirmed: block.confirmed[(i, t)],
                    deaths: block.deaths[(i, t)],
                })?;
            }
        }
        Ok(())
    };
    emit(&index.county_ids, &panel.county)?;
    emit(&index.state_ids, &panel.state)?;
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(LOCATIONS_FILE))?;
    for c in 0..index.n_counties() {
        w.serialize(LocationRow {
            location_id: index.county_ids[c].clone(),
            kind: "county".into(),
            state_id: index.state_ids[index.affiliation[c]].clone(),
            name: index.county_names[c].clone(),
            population: index.county_population[c],
            lat: index.county_coords[c].0,
            lon: index.county_coords[c].1,
        })?;
    }
    for s in 0..index.n_states() {
        w.serialize(LocationRow {
            location_id: index.state_ids[s].clone(),
            kind: "state".into(),
            state_id: index.state_ids[s].clone(),
            name: index.state_names[s].clone(),
            population: index.state_population[s],
            lat: index.state_coords[s].0,
            lon: index.state_coords[s].1,
        })?;
    }
    w.flush()?;

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        normalized: panel.normalized,
        per_capita_scale: panel.per_capita_scale,
        start_date,
        end_date,
        n_counties: index.n_counties(),
        n_states: index.n_states(),
        config_hash: config_hash.to_string(),
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Format {
            path,
            message: format!("unsupported schema version {}", manifest.schema_version),
        });
    }
    Ok(manifest)
}

pub fn read_panel_cache(dir: &Path) -> Result<(LocationIndex, EpidemicPanel, Manifest)> {
    let manifest = read_manifest(dir)?;

    let mut counties = Vec::new();
    let mut states = Vec::new();
    let mut rdr = csv::Reader::from_path(dir.join(LOCATIONS_FILE))?;
    for row in rdr.deserialize::<LocationRow>() {
        let row = row?;
        match row.kind.as_str() {
            "county" => counties.push(row),
            "state" => states.push(row),
            other => return Err(Error::Index(format!("unknown location kind `{other}`"))),
        }
    }
    let state_pos: HashMap<&str, usize> =
        states.iter().enumerate().map(|(i, s)| (s.location_id.as_str(), i)).collect();
    let affiliation = counties
        .iter()
        .map(|c| {
            state_pos.get(c.state_id.as_str()).copied().ok_or_else(|| {
                Error::Index(format!("county {} has unknown state {}", c.location_id, c.state_id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let index = LocationIndex {
        county_ids: counties.iter().map(|c| c.location_id.clone()).collect(),
        county_names: counties.iter().map(|c| c.name.clone()).collect(),
        state_ids: states.iter().map(|s| s.location_id.clone()).collect(),
        state_names: states.iter().map(|s| s.name.clone()).collect(),
        affiliation,
        county_population: counties.iter().map(|c| c.population).collect(),
        state_population: states.iter().map(|s| s.population).collect(),
        county_coords: counties.iter().map(|c| (c.lat, c.lon)).collect(),
        state_coords: states.iter().map(|s| (s.lat, s.lon)).collect(),
    };
    index.validate()?;
    if index.n_counties() != manifest.n_counties || index.n_states() != manifest.n_states {
        return Err(Error::Index("locations file disagrees with manifest".into()));
    }

    let t = (manifest.end_date - manifest.start_date).num_days() as usize + 1;
    let dates: Vec<NaiveDate> = (0..t)
        .map(|d| manifest.start_date + chrono::Duration::days(d as i64))
        .collect();
    let mut county = SeriesBlock::zeros(index.n_counties(), t);
    let mut state = SeriesBlock::zeros(index.n_states(), t);
    let county_pos: HashMap<&str, usize> =
        index.county_ids.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut filled = 0usize;
    let mut rdr = csv::Reader::from_path(dir.join(PANEL_FILE))?;
    for row in rdr.deserialize::<PanelRow>() {
        let row = row?;
        let d = (row.date - manifest.start_date).num_days();
        if d < 0 || d as usize >= t {
            return Err(Error::Range(format!("cached date {} outside manifest range", row.date)));
        }
        let (block, i) = if let Some(&c) = county_pos.get(row.location_id.as_str()) {
            (&mut county, c)
        } else if let Some(&s) = state_pos.get(row.location_id.as_str()) {
            (&mut state, s)
        } else {
            return Err(Error::Index(format!("unknown location {}", row.location_id)));
        };
        set(&mut block.confirmed, i, d as usize, row.confirmed);
        set(&mut block.deaths, i, d as usize, row.deaths);
        filled += 1;
    }
    if filled != (index.n_counties() + index.n_states()) * t {
        return Err(Error::Index(format!(
            "panel cache has {filled} rows, expected {}",
            (index.n_counties() + index.n_states()) * t
        )));
    }
    let panel = EpidemicPanel {
        dates,
        county,
        state,
        normalized: manifest.normalized,
        per_capita_scale: manifest.per_capita_scale,
    };
    Ok((index, panel, manifest))
}

fn set(m: &mut Matrix, i: usize, j: usize, v: f64) {
    m[(i, j)] = v;
}
