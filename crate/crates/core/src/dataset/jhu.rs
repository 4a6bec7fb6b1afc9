//! Ingestion of JHU CSSE wide-format time-series CSVs.
//!
//! The files carry one row per location and one column per date (`M/D/YY`),
//! preceded by metadata columns. Values are cumulative; the panel stores
//! daily incidents obtained by differencing and clamping negative revisions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{EpidemicPanel, LocationIndex, SeriesBlock};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const REQUIRED_COLUMNS: [&str; 6] = ["UID", "FIPS", "Admin2", "Province_State", "Lat", "Long_"];

/// FIPS codes and names of the 50 states (DC and territories excluded).
pub const STATES: [(&str, &str); 50] = [
    ("01", "Alabama"),
    ("02", "Alaska"),
    ("04", "Arizona"),
    ("05", "Arkansas"),
    ("06", "California"),
    ("08", "Colorado"),
    ("09", "Connecticut"),
    ("10", "Delaware"),
    ("12", "Florida"),
    ("13", "Georgia"),
    ("15", "Hawaii"),
    ("16", "Idaho"),
    ("17", "Illinois"),
    ("18", "Indiana"),
    ("19", "Iowa"),
    ("20", "Kansas"),
    ("21", "Kentucky"),
    ("22", "Louisiana"),
    ("23", "Maine"),
    ("24", "Maryland"),
    ("25", "Massachusetts"),
    ("26", "Michigan"),
    ("27", "Minnesota"),
    ("28", "Mississippi"),
    ("29", "Missouri"),
    ("30", "Montana"),
    ("31", "Nebraska"),
    ("32", "Nevada"),
    ("33", "New Hampshire"),
    ("34", "New Jersey"),
    ("35", "New Mexico"),
    ("36", "New York"),
    ("37", "North Carolina"),
    ("38", "North Dakota"),
    ("39", "Ohio"),
    ("40", "Oklahoma"),
    ("41", "Oregon"),
    ("42", "Pennsylvania"),
    ("44", "Rhode Island"),
    ("45", "South Carolina"),
    ("46", "South Dakota"),
    ("47", "Tennessee"),
    ("48", "Texas"),
    ("49", "Utah"),
    ("50", "Vermont"),
    ("51", "Virginia"),
    ("53", "Washington"),
    ("54", "West Virginia"),
    ("55", "Wisconsin"),
    ("56", "Wyoming"),
];

/// District of Columbia, territories, and JHU bookkeeping prefixes
/// ("Out of <state>" = 80, "Unassigned" = 90). Rows under these prefixes are
/// outside the forecasting location set and skipped silently.
const EXCLUDED_PREFIXES: [&str; 9] = ["11", "60", "66", "69", "72", "74", "78", "80", "90"];

pub fn state_name(code: &str) -> Option<&'static str> {
    STATES.iter().find(|(c, _)| *c == code).map(|(_, n)| *n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoRow {
    pub fips: String,
    pub county_name: String,
    pub state_name: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRow {
    pub fips: String,
    pub population: u64,
}

#[derive(Debug, Clone)]
pub struct JhuRow {
    pub geo: GeoRow,
    pub cumulative: Vec<f64>,
}

/// One parsed wide-format file.
#[derive(Debug, Clone)]
pub struct JhuTable {
    pub dates: Vec<NaiveDate>,
    pub rows: Vec<JhuRow>,
}

/// Input files for [`load_panel`]. State files are optional; when absent the
/// state series are the sums of their member counties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSources {
    pub county_confirmed: PathBuf,
    pub county_deaths: PathBuf,
    #[serde(default)]
    pub state_confirmed: Option<PathBuf>,
    #[serde(default)]
    pub state_deaths: Option<PathBuf>,
    pub population: PathBuf,
}

/// Normalises a FIPS cell (`"6037"`, `"6037.0"`, `"06037"`) to `width` digits.
pub fn normalize_fips(raw: &str, width: usize) -> Option<String> {
    let t = raw.trim();
    let t = t.strip_suffix(".0").unwrap_or(t);
    if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) || t.len() > width {
        return None;
    }
    Some(format!("{t:0>width$}"))
}

fn parse_header_date(s: &str) -> Option<NaiveDate> {
    let mut it = s.trim().split('/');
    let m: u32 = it.next()?.parse().ok()?;
    let d: u32 = it.next()?.parse().ok()?;
    let y: i32 = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    let y = if y < 100 { 2000 + y } else { y };
    NaiveDate::from_ymd_opt(y, m, d)
}

pub fn read_jhu_wide(path: &Path) -> Result<JhuTable> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let mut required = [0usize; 6];
    for (slot, name) in required.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = col(name).ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            message: format!("missing column `{name}`"),
        })?;
    }
    let [_, fips_col, admin_col, prov_col, lat_col, lon_col] = required;

    let first_date = header
        .iter()
        .position(|h| parse_header_date(h).is_some())
        .ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            message: "no date columns".into(),
        })?;
    let mut dates = Vec::with_capacity(header.len() - first_date);
    for h in header.iter().skip(first_date) {
        let d = parse_header_date(h).ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: format!("non-date column `{h}` inside the date block"),
        })?;
        if let Some(&prev) = dates.last() {
            if d - prev != chrono::Duration::days(1) {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    message: format!("date header not contiguous/increasing at {prev} -> {d}"),
                });
            }
        }
        dates.push(d);
    }

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            let cell = rec.get(i).unwrap_or("").trim();
            if cell.is_empty() {
                return Ok(0.0);
            }
            cell.parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                message: format!("bad number `{cell}` in row {:?}", rec.position().map(|p| p.line())),
            })
        };
        let cumulative = (first_date..header.len()).map(num).collect::<Result<Vec<_>>>()?;
        rows.push(JhuRow {
            geo: GeoRow {
                fips: rec.get(fips_col).unwrap_or("").trim().to_string(),
                county_name: rec.get(admin_col).unwrap_or("").trim().to_string(),
                state_name: rec.get(prov_col).unwrap_or("").trim().to_string(),
                lat: num(lat_col)?,
                lon: num(lon_col)?,
            },
            cumulative,
        });
    }
    Ok(JhuTable { dates, rows })
}

pub fn read_population_csv(path: &Path) -> Result<Vec<PopulationRow>> {
    #[derive(Deserialize)]
    struct Raw {
        #[serde(rename = "FIPS", alias = "fips")]
        fips: String,
        #[serde(alias = "Population", alias = "POPESTIMATE2019")]
        population: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if !headers.iter().any(|h| h.eq_ignore_ascii_case("fips")) {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: "missing column `FIPS`".into(),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize::<Raw>() {
        let r = rec?;
        if !(r.population >= 0.0) {
            return Err(Error::Index(format!("negative population for {}", r.fips)));
        }
        out.push(PopulationRow {
            fips: r.fips.trim().to_string(),
            population: r.population.round() as u64,
        });
    }
    Ok(out)
}

/// Classification of one county row's FIPS code.
enum Scope {
    County { fips: String, state: String },
    Excluded,
    UnknownState(String),
}

fn classify(raw_fips: &str) -> Scope {
    // Whole-territory rows carry a bare two-digit code.
    if raw_fips.trim().trim_end_matches(".0").len() <= 2 {
        return Scope::Excluded;
    }
    let Some(fips) = normalize_fips(raw_fips, 5) else {
        return Scope::Excluded;
    };
    let prefix = &fips[..2];
    if EXCLUDED_PREFIXES.contains(&prefix) || fips[2..].parse::<u32>().unwrap_or(0) >= 800 {
        return Scope::Excluded;
    }
    if state_name(prefix).is_none() {
        return Scope::UnknownState(fips);
    }
    Scope::County {
        state: prefix.to_string(),
        fips,
    }
}

/// County geography rows from a county-level file, restricted to the 50 states.
pub fn county_geo_rows(table: &JhuTable) -> Result<Vec<GeoRow>> {
    let mut out = Vec::new();
    for row in &table.rows {
        match classify(&row.geo.fips) {
            Scope::County { fips, .. } => out.push(GeoRow {
                fips,
                ..row.geo.clone()
            }),
            Scope::Excluded => {}
            Scope::UnknownState(f) => {
                return Err(Error::Index(format!("county {f} belongs to no known state")))
            }
        }
    }
    Ok(out)
}

/// Builds the county/state index. Counties are ordered by ascending FIPS and
/// affiliated through the two-digit FIPS prefix; states are those with at
/// least one county, ascending by code. State coordinates are the centroid of
/// member counties. A state without its own population row gets the sum of
/// its counties.
pub fn build_location_index(
    geo_rows: &[GeoRow],
    population_rows: &[PopulationRow],
) -> Result<LocationIndex> {
    let mut pop: HashMap<String, u64> = HashMap::new();
    for p in population_rows {
        let width = if p.fips.trim().trim_end_matches(".0").len() <= 2 { 2 } else { 5 };
        if let Some(f) = normalize_fips(&p.fips, width) {
            pop.insert(f, p.population);
        }
    }

    let mut counties: BTreeMap<String, &GeoRow> = BTreeMap::new();
    for g in geo_rows {
        let fips = normalize_fips(&g.fips, 5)
            .ok_or_else(|| Error::Index(format!("malformed FIPS `{}`", g.fips)))?;
        if counties.insert(fips.clone(), g).is_some() {
            return Err(Error::Index(format!("duplicate FIPS {fips}")));
        }
    }

    let mut states: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for fips in counties.keys() {
        states.entry(fips[..2].to_string()).or_default().push(fips.clone());
    }
    let state_ids: Vec<String> = states.keys().cloned().collect();
    let state_pos: HashMap<&str, usize> =
        state_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut index = LocationIndex {
        county_ids: Vec::with_capacity(counties.len()),
        county_names: Vec::with_capacity(counties.len()),
        state_ids: state_ids.clone(),
        state_names: Vec::with_capacity(state_ids.len()),
        affiliation: Vec::with_capacity(counties.len()),
        county_population: Vec::with_capacity(counties.len()),
        state_population: Vec::with_capacity(state_ids.len()),
        county_coords: Vec::with_capacity(counties.len()),
        state_coords: Vec::with_capacity(state_ids.len()),
    };
    for (fips, g) in &counties {
        let p = pop
            .get(fips)
            .copied()
            .filter(|&p| p > 0)
            .ok_or_else(|| Error::Index(format!("missing or zero population for county {fips}")))?;
        index.county_ids.push(fips.clone());
        index.county_names.push(g.county_name.clone());
        index.affiliation.push(state_pos[&fips[..2]]);
        index.county_population.push(p);
        index.county_coords.push((g.lat, g.lon));
    }
    for (s, members) in &states {
        let name = state_name(s)
            .map(str::to_string)
            .or_else(|| members.first().map(|f| counties[f].state_name.clone()))
            .unwrap_or_default();
        index.state_names.push(name);
        let member_pos: Vec<usize> = members
            .iter()
            .map(|f| index.county_ids.binary_search(f).expect("county present"))
            .collect();
        let summed: u64 = member_pos.iter().map(|&c| index.county_population[c]).sum();
        index.state_population.push(pop.get(s).copied().unwrap_or(summed));
        let k = member_pos.len() as f64;
        let (lat, lon) = member_pos.iter().fold((0.0, 0.0), |(a, b), &c| {
            (a + index.county_coords[c].0, b + index.county_coords[c].1)
        });
        index.state_coords.push((lat / k, lon / k));
    }
    index.validate()?;
    Ok(index)
}

/// Daily incidents from a cumulative series; the first value is kept as is.
pub fn difference_cumulative(cumulative: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    cumulative
        .iter()
        .map(|&c| {
            let d = c - prev;
            prev = c;
            d
        })
        .collect()
}

/// Differences, clamps negative revisions to zero, and slices to `range`.
fn daily_in_range(cumulative: &[f64], offset: usize, len: usize) -> Vec<f64> {
    difference_cumulative(cumulative)[offset..offset + len]
        .iter()
        .map(|&d| d.max(0.0))
        .collect()
}

/// Half-open date range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Default for DateRange {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2021, 7, 1).unwrap(),
        }
    }
}

impl DateRange {
    pub fn len(&self) -> usize {
        (self.end - self.start).num_days().max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn offset_in(&self, table: &JhuTable, path: &Path) -> Result<usize> {
        let (Some(&first), Some(&last)) = (table.dates.first(), table.dates.last()) else {
            return Err(Error::Range(format!("{} has no dates", path.display())));
        };
        if self.start < first || self.end - chrono::Duration::days(1) > last {
            return Err(Error::Range(format!(
                "{} covers {first}..={last}, requested {}..{}",
                path.display(),
                self.start,
                self.end
            )));
        }
        Ok((self.start - first).num_days() as usize)
    }
}

/// Reads one county-level file into an `M × T` matrix ordered by `index`.
fn county_matrix(path: &Path, index: &LocationIndex, range: DateRange) -> Result<Matrix> {
    let table = read_jhu_wide(path)?;
    let offset = range.offset_in(&table, path)?;
    let t = range.len();
    let mut out = Matrix::zeros(index.n_counties(), t);
    let mut seen = vec![false; index.n_counties()];
    for row in &table.rows {
        match classify(&row.geo.fips) {
            Scope::Excluded => {}
            Scope::UnknownState(f) => {
                return Err(Error::Index(format!(
                    "{}: county {f} belongs to no known state",
                    path.display()
                )))
            }
            Scope::County { fips, state } => {
                if index.state_position(&state).is_none() {
                    return Err(Error::Index(format!(
                        "{}: county {fips} has state {state} not in the index",
                        path.display()
                    )));
                }
                let Some(c) = index.county_position(&fips) else {
                    return Err(Error::Index(format!(
                        "{}: county {fips} not in the index",
                        path.display()
                    )));
                };
                out.row_mut(c).copy_from_slice(&daily_in_range(&row.cumulative, offset, t));
                seen[c] = true;
            }
        }
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::Index(format!(
            "{}: no row for county {}",
            path.display(),
            index.county_ids[c]
        )));
    }
    Ok(out)
}

fn state_matrix(path: &Path, index: &LocationIndex, range: DateRange) -> Result<Matrix> {
    let table = read_jhu_wide(path)?;
    let offset = range.offset_in(&table, path)?;
    let t = range.len();
    let mut out = Matrix::zeros(index.n_states(), t);
    let mut seen = HashSet::new();
    for row in &table.rows {
        let by_code = normalize_fips(&row.geo.fips, 2).and_then(|f| index.state_position(&f));
        let by_name = || index.state_names.iter().position(|n| *n == row.geo.state_name);
        if let Some(s) = by_code.or_else(by_name) {
            out.row_mut(s).copy_from_slice(&daily_in_range(&row.cumulative, offset, t));
            seen.insert(s);
        }
    }
    if seen.len() != index.n_states() {
        let missing = (0..index.n_states()).find(|s| !seen.contains(s)).unwrap_or(0);
        return Err(Error::Index(format!(
            "{}: no row for state {}",
            path.display(),
            index.state_ids[missing]
        )));
    }
    Ok(out)
}

fn aggregate_states(county: &Matrix, index: &LocationIndex) -> Matrix {
    let mut out = Matrix::zeros(index.n_states(), county.cols());
    for (c, &s) in index.affiliation.iter().enumerate() {
        for (o, v) in out.row_mut(s).iter_mut().zip(county.row(c)) {
            *o += v;
        }
    }
    out
}

/// Loads daily incident panels for every location in `index` over `range`.
pub fn load_panel(
    sources: &PanelSources,
    index: &LocationIndex,
    range: DateRange,
) -> Result<EpidemicPanel> {
    if range.is_empty() {
        return Err(Error::Range(format!("empty date range {}..{}", range.start, range.end)));
    }
    let county = SeriesBlock {
        confirmed: county_matrix(&sources.county_confirmed, index, range)?,
        deaths: county_matrix(&sources.county_deaths, index, range)?,
    };
    let state = SeriesBlock {
        confirmed: match &sources.state_confirmed {
            Some(p) => state_matrix(p, index, range)?,
            None => aggregate_states(&county.confirmed, index),
        },
        deaths: match &sources.state_deaths {
            Some(p) => state_matrix(p, index, range)?,
            None => aggregate_states(&county.deaths, index),
        },
    };
    let panel = EpidemicPanel {
        dates: (0..range.len())
            .map(|d| range.start + chrono::Duration::days(d as i64))
            .collect(),
        county,
        state,
        normalized: false,
        per_capita_scale: None,
    };
    panel.validate()?;
    Ok(panel)
}

/// Full ingest: index from the county confirmed file plus population table,
/// then the aligned panel.
pub fn ingest(sources: &PanelSources, range: DateRange) -> Result<(LocationIndex, EpidemicPanel)> {
    let table = read_jhu_wide(&sources.county_confirmed)?;
    let geo = county_geo_rows(&table)?;
    let population = read_population_csv(&sources.population)?;
    let index = build_location_index(&geo, &population)?;
    let panel = load_panel(sources, &index, range)?;
    Ok((index, panel))
}
