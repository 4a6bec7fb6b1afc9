//! Epidemic panels at county and state resolution.
//!
//! A [`LocationIndex`] fixes the ordering of counties and states used by every
//! matrix in the crate. An [`EpidemicPanel`] holds aligned daily incident
//! series for both scales. [`make_windows`] cuts the panel into
//! Sunday-anchored training samples.

pub mod cache;
pub mod calendar;
pub mod jhu;
mod window;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use jhu::{build_location_index, load_panel, GeoRow, PanelSources, PopulationRow};
pub use window::{
    anchor_days, make_windows, model_input, weekly_sums, windows_at, EpidemicWindow, ModelInput,
    WindowSpec,
};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Raw input channels: confirmed cases, deaths.
pub const RAW_CHANNELS: usize = 2;

pub const DEFAULT_PER_CAPITA: f64 = 1e5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationIndex {
    /// Five-digit county FIPS codes, ascending.
    pub county_ids: Vec<String>,
    pub county_names: Vec<String>,
    /// Two-digit state FIPS codes, ascending.
    pub state_ids: Vec<String>,
    pub state_names: Vec<String>,
    /// County position → state position.
    pub affiliation: Vec<usize>,
    pub county_population: Vec<u64>,
    pub state_population: Vec<u64>,
    /// (latitude, longitude) in degrees.
    pub county_coords: Vec<(f64, f64)>,
    pub state_coords: Vec<(f64, f64)>,
}

impl LocationIndex {
    pub fn n_counties(&self) -> usize {
        self.county_ids.len()
    }

    pub fn n_states(&self) -> usize {
        self.state_ids.len()
    }

    pub fn county_position(&self, fips: &str) -> Option<usize> {
        self.county_ids.iter().position(|c| c == fips)
    }

    pub fn state_position(&self, code: &str) -> Option<usize> {
        self.state_ids.iter().position(|s| s == code)
    }

    /// Counties affiliated with each state, in county order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_states()];
        for (c, &s) in self.affiliation.iter().enumerate() {
            out[s].push(c);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_counties();
        let n = self.n_states();
        let lens = [
            self.county_names.len(),
            self.affiliation.len(),
            self.county_population.len(),
            self.county_coords.len(),
        ];
        if lens.iter().any(|&l| l != m) {
            return Err(Error::Index(format!("county fields disagree on length {m}")));
        }
        if [self.state_names.len(), self.state_population.len(), self.state_coords.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Index(format!("state fields disagree on length {n}")));
        }
        if let Some(c) = self.affiliation.iter().position(|&s| s >= n) {
            return Err(Error::Index(format!(
                "county {} affiliated to unknown state",
                self.county_ids[c]
            )));
        }
        let pops = self.county_population.iter().chain(&self.state_population);
        if pops.into_iter().any(|&p| p == 0) {
            return Err(Error::Index("zero population".into()));
        }
        let coords = self.county_coords.iter().chain(&self.state_coords);
        for &(lat, lon) in coords {
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(Error::Index(format!("coordinate ({lat}, {lon}) out of range")));
            }
        }
        Ok(())
    }
}

/// Daily incidents for one resolution, `locations × dates` per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesBlock {
    pub confirmed: Matrix,
    pub deaths: Matrix,
}

impl SeriesBlock {
    pub fn zeros(locations: usize, dates: usize) -> Self {
        Self {
            confirmed: Matrix::zeros(locations, dates),
            deaths: Matrix::zeros(locations, dates),
        }
    }

    pub fn channel(&self, c: usize) -> &Matrix {
        match c {
            0 => &self.confirmed,
            1 => &self.deaths,
            _ => panic!("channel {c} out of range"),
        }
    }

    fn map_rows(&self, factor: &[f64]) -> Self {
        let scale = |m: &Matrix| Matrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * factor[i]);
        Self {
            confirmed: scale(&self.confirmed),
            deaths: scale(&self.deaths),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpidemicPanel {
    pub dates: Vec<NaiveDate>,
    pub county: SeriesBlock,
    pub state: SeriesBlock,
    pub normalized: bool,
    /// Persons per unit when `normalized` (cases per `scale` residents).
    pub per_capita_scale: Option<f64>,
}

impl EpidemicPanel {
    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn date_position(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        let off = (date - first).num_days();
        (off >= 0 && (off as usize) < self.dates.len()).then_some(off as usize)
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.dates.windows(2) {
            if (w[1] - w[0]).num_days() != 1 {
                return Err(Error::Index(format!("date gap between {} and {}", w[0], w[1])));
            }
        }
        let t = self.dates.len();
        for block in [&self.county, &self.state] {
            if block.confirmed.cols() != t
                || block.deaths.cols() != t
                || block.confirmed.rows() != block.deaths.rows()
            {
                return Err(Error::shape("EpidemicPanel", "series do not match the date axis"));
            }
        }
        Ok(())
    }

    /// Restricts the panel to `[from, to]`, both inclusive.
    pub fn slice_dates(&self, from: NaiveDate, to: NaiveDate) -> Result<Self> {
        let (Some(a), Some(b)) = (self.date_position(from), self.date_position(to)) else {
            return Err(Error::Range(format!("{from}..{to} outside panel")));
        };
        let cut = |m: &Matrix| Matrix::from_fn(m.rows(), b + 1 - a, |i, j| m[(i, a + j)]);
        let block = |s: &SeriesBlock| SeriesBlock {
            confirmed: cut(&s.confirmed),
            deaths: cut(&s.deaths),
        };
        Ok(Self {
            dates: self.dates[a..=b].to_vec(),
            county: block(&self.county),
            state: block(&self.state),
            normalized: self.normalized,
            per_capita_scale: self.per_capita_scale,
        })
    }
}

/// Divides every series by its location's population and multiplies by
/// `per_capita_scale`.
pub fn normalize_by_population(
    panel: &EpidemicPanel,
    index: &LocationIndex,
    per_capita_scale: f64,
) -> Result<EpidemicPanel> {
    if panel.normalized {
        return Err(Error::State("panel is already population-normalized".into()));
    }
    if !(per_capita_scale > 0.0) {
        return Err(Error::Config(format!("per-capita scale {per_capita_scale}")));
    }
    check_rows(panel, index)?;
    let f = |pops: &[u64]| -> Vec<f64> { pops.iter().map(|&p| per_capita_scale / p as f64).collect() };
    Ok(EpidemicPanel {
        dates: panel.dates.clone(),
        county: panel.county.map_rows(&f(&index.county_population)),
        state: panel.state.map_rows(&f(&index.state_population)),
        normalized: true,
        per_capita_scale: Some(per_capita_scale),
    })
}

/// Inverse of [`normalize_by_population`].
pub fn denormalize(panel: &EpidemicPanel, index: &LocationIndex) -> Result<EpidemicPanel> {
    let Some(scale) = panel.per_capita_scale.filter(|_| panel.normalized) else {
        return Err(Error::State("panel is not normalized".into()));
    };
    check_rows(panel, index)?;
    let f = |pops: &[u64]| -> Vec<f64> { pops.iter().map(|&p| p as f64 / scale).collect() };
    Ok(EpidemicPanel {
        dates: panel.dates.clone(),
        county: panel.county.map_rows(&f(&index.county_population)),
        state: panel.state.map_rows(&f(&index.state_population)),
        normalized: false,
        per_capita_scale: None,
    })
}

fn check_rows(panel: &EpidemicPanel, index: &LocationIndex) -> Result<()> {
    if panel.county.confirmed.rows() != index.n_counties()
        || panel.state.confirmed.rows() != index.n_states()
    {
        return Err(Error::Index(format!(
            "panel has {}/{} county/state rows, index has {}/{}",
            panel.county.confirmed.rows(),
            panel.state.confirmed.rows(),
            index.n_counties(),
            index.n_states()
        )));
    }
    Ok(())
}

/// Great-circle distance in kilometres between two (lat, lon) points.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    const EARTH_RADIUS_KM: f64 = 6371.0088;
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2)
        + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Three counties in two states: {01001, 01003} → 01, {06037} → 06.
    pub fn tiny_index() -> LocationIndex {
        LocationIndex {
            county_ids: vec!["01001".into(), "01003".into(), "06037".into()],
            county_names: vec!["Autauga".into(), "Baldwin".into(), "Los Angeles".into()],
            state_ids: vec!["01".into(), "06".into()],
            state_names: vec!["Alabama".into(), "California".into()],
            affiliation: vec![0, 0, 1],
            county_population: vec![100_000, 200_000, 1_000_000],
            state_population: vec![300_000, 1_000_000],
            county_coords: vec![(32.5, -86.6), (30.7, -87.7), (34.3, -118.2)],
            state_coords: vec![(31.6, -87.2), (34.3, -118.2)],
        }
    }

    pub fn tiny_panel(dates: usize) -> EpidemicPanel {
        let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        let county = SeriesBlock {
            confirmed: Matrix::from_fn(3, dates, |i, t| (i * 10 + t % 7) as f64),
            deaths: Matrix::from_fn(3, dates, |i, _| i as f64),
        };
        let state = SeriesBlock {
            confirmed: Matrix::from_fn(2, dates, |s, t| {
                if s == 0 {
                    county.confirmed[(0, t)] + county.confirmed[(1, t)]
                } else {
                    county.confirmed[(2, t)]
                }
            }),
            deaths: Matrix::from_fn(2, dates, |s, _| if s == 0 { 1.0 } else { 2.0 }),
        };
        EpidemicPanel {
            dates: (0..dates).map(|d| start + chrono::Duration::days(d as i64)).collect(),
            county,
            state,
            normalized: false,
            per_capita_scale: None,
        }
    }
}
