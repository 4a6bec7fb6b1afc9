//! Forecast scoring: point metrics, populous-county subsets, per-week
//! reports, the persistence baseline and learned-graph signal export.

pub mod plot;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use chrono::{NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::dataset::calendar::weekdays_between;
use crate::dataset::{denormalize, weekly_sums, EpidemicPanel, LocationIndex};
use crate::error::{Error, Result};
use crate::dataset::EpidemicWindow;
use crate::forecaster::{split_windows, train_split, EnsemblePredictor, ForecastTable, TrainConfig, Variant};
use crate::params::ModelDims;
use crate::graph_learning::{EdgeStats, MultiScaleGraph};
use crate::parallel;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    /// Fraction, over entries with nonzero truth; NaN when every truth is 0.
    pub mape: f64,
    pub rmse: f64,
}

impl Metrics {
    pub fn mape_percent(&self) -> f64 {
        100.0 * self.mape
    }
}

pub fn compute_metrics(y_hat: &[f64], y: &[f64]) -> Result<Metrics> {
    if y_hat.len() != y.len() {
        return Err(Error::shape(
            "compute_metrics",
            format!("{} forecasts for {} observations", y_hat.len(), y.len()),
        ));
    }
    if y.is_empty() {
        return Err(Error::Domain("metrics of an empty slice".into()));
    }
    let n = y.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut pct = 0.0;
    let mut nonzero = 0usize;
    for (&a, &b) in y_hat.iter().zip(y) {
        let e = a - b;
        abs += e.abs();
        sq += e * e;
        if b != 0.0 {
            pct += e.abs() / b.abs();
            nonzero += 1;
        }
    }
    Ok(Metrics {
        mae: abs / n,
        mape: if nonzero == 0 { f64::NAN } else { pct / nonzero as f64 },
        rmse: (sq / n).sqrt(),
    })
}

/// The `k` most populous counties (positions in `index`), ties broken by
/// ascending FIPS.
pub fn topk_counties(index: &LocationIndex, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Domain("k must be positive".into()));
    }
    if k > index.n_counties() {
        return Err(Error::Domain(format!("k = {k} exceeds {} counties", index.n_counties())));
    }
    let mut order: Vec<usize> = (0..index.n_counties()).collect();
    order.sort_by(|&a, &b| {
        index.county_population[b]
            .cmp(&index.county_population[a])
            .then_with(|| index.county_ids[a].cmp(&index.county_ids[b]))
    });
    order.truncate(k);
    Ok(order)
}

/// Named set of counties scored together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub name: String,
    pub counties: Vec<usize>,
}

/// `@k` subsets for each feasible size plus `all`. Sizes larger than the
/// index are skipped with a warning.
pub fn standard_subsets(index: &LocationIndex, sizes: &[usize]) -> Result<Vec<Subset>> {
    let mut out = Vec::new();
    for &k in sizes {
        if k > index.n_counties() {
            log::warn!("skipping @{k}: only {} counties", index.n_counties());
            continue;
        }
        out.push(Subset {
            name: format!("@{k}"),
            counties: topk_counties(index, k)?,
        });
    }
    out.push(Subset {
        name: "all".into(),
        counties: (0..index.n_counties()).collect(),
    });
    Ok(out)
}

/// Returns `panel` in case counts.
pub fn raw_counts(panel: &EpidemicPanel, index: &LocationIndex) -> Result<EpidemicPanel> {
    if panel.normalized {
        denormalize(panel, index)
    } else {
        Ok(panel.clone())
    }
}

/// Last observed week (the 7 days ending on the anchor) carried forward.
pub fn persistence_forecast(
    panel: &EpidemicPanel,
    index: &LocationIndex,
    anchor_date: NaiveDate,
    horizon: usize,
) -> Result<ForecastTable> {
    let raw = raw_counts(panel, index)?;
    let a = raw
        .date_position(anchor_date)
        .filter(|&a| a >= 6)
        .ok_or_else(|| Error::Range(format!("anchor {anchor_date} needs 7 observed days")))?;
    let c = &raw.county.confirmed;
    let y = Matrix::from_fn(c.rows(), horizon, |i, _| (a - 6..=a).map(|t| c[(i, t)]).sum());
    ForecastTable::from_matrix(anchor_date, index, &y)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub variant: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekRow {
    pub anchor_date: NaiveDate,
    pub horizon_weeks: usize,
    pub subset: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub horizon_weeks: usize,
    pub subset: String,
    pub weeks: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub weeks: Vec<WeekRow>,
    pub summary: Vec<SummaryRow>,
    /// Anchor Sundays in range without a forecast.
    pub gaps: Vec<NaiveDate>,
}

/// Mean of the finite values; NaN if there are none.
fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Scores every anchor Sunday in `[from, to]` for each horizon and subset.
/// Truth is the Sunday-anchored weekly sum of daily incidents in case
/// counts; horizons whose target week runs past the truth panel are not
/// scored. Weeks without forecasts are listed as gaps; the summary is the
/// equal-weight mean over scored weeks.
pub fn per_week_evaluation(
    forecasts: &ForecastTable,
    truth: &EpidemicPanel,
    index: &LocationIndex,
    subsets: &[Subset],
    from: NaiveDate,
    to: NaiveDate,
    provenance: Provenance,
) -> Result<EvalReport> {
    if subsets.is_empty() {
        return Err(Error::Domain("no evaluation subsets".into()));
    }
    let raw = raw_counts(truth, index)?;
    let fips_pos: HashMap<&str, usize> = index
        .county_ids
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();
    let mut by_anchor: HashMap<NaiveDate, Vec<&crate::forecaster::ForecastRow>> = HashMap::new();
    for r in &forecasts.rows {
        by_anchor.entry(r.anchor_date).or_default().push(r);
    }

    let anchors = weekdays_between(from, to, Weekday::Sun);
    let (present, gaps): (Vec<NaiveDate>, Vec<NaiveDate>) =
        anchors.into_iter().partition(|a| by_anchor.contains_key(a));
    for g in &gaps {
        log::warn!("no forecast for anchor week {g}");
    }

    let scored = parallel::map(&present, |&anchor| -> Result<Vec<WeekRow>> {
        let rows = &by_anchor[&anchor];
        let horizon = rows.iter().map(|r| r.horizon_weeks).max().unwrap_or(0);
        let mut y_hat = Matrix::filled(index.n_counties(), horizon, f64::NAN);
        for r in rows {
            let i = *fips_pos
                .get(r.fips.as_str())
                .ok_or_else(|| Error::Index(format!("forecast for unknown county {}", r.fips)))?;
            if r.horizon_weeks == 0 {
                return Err(Error::Index(format!("horizon 0 in forecast for {}", r.fips)));
            }
            y_hat[(i, r.horizon_weeks - 1)] = r.point;
        }
        let a = raw
            .date_position(anchor)
            .ok_or_else(|| Error::Range(format!("anchor {anchor} outside the truth panel")))?;
        let observed = horizon.min((raw.n_dates() - 1 - a) / 7);
        if observed < horizon {
            log::warn!("anchor {anchor}: truth covers {observed} of {horizon} target weeks");
        }
        let y = weekly_sums(&raw.county.confirmed, a, observed)?;
        let mut out = Vec::new();
        for h in 0..observed {
            for s in subsets {
                let mut pred = Vec::with_capacity(s.counties.len());
                let mut obs = Vec::with_capacity(s.counties.len());
                for &i in &s.counties {
                    let p = y_hat[(i, h)];
                    if p.is_nan() {
                        return Err(Error::Index(format!(
                            "anchor {anchor}: no {}-week forecast for county {}",
                            h + 1,
                            index.county_ids[i]
                        )));
                    }
                    pred.push(p);
                    obs.push(y[(i, h)]);
                }
                out.push(WeekRow {
                    anchor_date: anchor,
                    horizon_weeks: h + 1,
                    subset: s.name.clone(),
                    metrics: compute_metrics(&pred, &obs)?,
                });
            }
        }
        Ok(out)
    });
    let mut weeks = Vec::new();
    for r in scored {
        weeks.extend(r?);
    }
    let summary = summarize(&weeks);
    Ok(EvalReport {
        provenance,
        weeks,
        summary,
        gaps,
    })
}

/// Equal-weight means of per-week rows grouped by (horizon, subset), in
/// first-seen order.
pub fn summarize(weeks: &[WeekRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, String)> = Vec::new();
    for w in weeks {
        let k = (w.horizon_weeks, w.subset.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.sort_by_key(|k| k.0);
    keys.into_iter()
        .map(|(h, s)| {
            let rows: Vec<&WeekRow> = weeks
                .iter()
                .filter(|w| w.horizon_weeks == h && w.subset == s)
                .collect();
            SummaryRow {
                horizon_weeks: h,
                weeks: rows.len(),
                metrics: Metrics {
                    mae: finite_mean(rows.iter().map(|r| r.metrics.mae)),
                    mape: finite_mean(rows.iter().map(|r| r.metrics.mape)),
                    rmse: finite_mean(rows.iter().map(|r| r.metrics.rmse)),
                },
                subset: s,
            }
        })
        .collect()
}

fn hash_line(hash: &str) -> String {
    format!("# config_hash: {hash}\n")
}

impl EvalReport {
    /// Wide summary: `model,variant,subset,horizon_weeks,weeks,mae,mape,rmse`.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(hash_line(&self.provenance.config_hash).as_bytes())?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["model", "variant", "subset", "horizon_weeks", "weeks", "mae", "mape", "rmse"])?;
        for r in &self.summary {
            w.write_record([
                self.provenance.model.clone(),
                self.provenance.variant.clone(),
                r.subset.clone(),
                r.horizon_weeks.to_string(),
                r.weeks.to_string(),
                r.metrics.mae.to_string(),
                r.metrics.mape.to_string(),
                r.metrics.rmse.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long format for box plots: `week,horizon,subset,metric,value`.
    pub fn write_long_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(hash_line(&self.provenance.config_hash).as_bytes())?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["week", "horizon", "subset", "metric", "value"])?;
        for r in &self.weeks {
            for (name, v) in [("mae", r.metrics.mae), ("mape", r.metrics.mape), ("rmse", r.metrics.rmse)] {
                w.write_record([
                    r.anchor_date.to_string(),
                    r.horizon_weeks.to_string(),
                    r.subset.clone(),
                    name.to_string(),
                    v.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_gaps_csv(&self, path: &Path) -> Result<()> {
        let mut out = hash_line(&self.provenance.config_hash);
        out.push_str("missing_anchor_date\n");
        for g in &self.gaps {
            let _ = writeln!(out, "{g}");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Per-week MAPE distribution by horizon for one subset, as SVG.
    pub fn boxplot_svg(&self, subset: &str) -> String {
        let mut horizons: Vec<usize> = self.weeks.iter().map(|w| w.horizon_weeks).collect();
        horizons.sort_unstable();
        horizons.dedup();
        let groups: Vec<(String, Vec<f64>)> = horizons
            .iter()
            .map(|&h| {
                let v = self
                    .weeks
                    .iter()
                    .filter(|w| w.horizon_weeks == h && w.subset == subset)
                    .map(|w| w.metrics.mape)
                    .collect();
                (format!("{h} wk"), v)
            })
            .collect();
        let title = format!("{} {} weekly MAPE, {subset}", self.provenance.model, self.provenance.variant);
        with_hash_comment(plot::box_plot(&title, &groups), &self.provenance.config_hash)
    }
}

fn with_hash_comment(svg: String, hash: &str) -> String {
    match svg.find('\n') {
        Some(i) => format!("{}<!-- config_hash: {hash} -->\n{}", &svg[..=i], &svg[i + 1..]),
        None => svg,
    }
}

/// One row of the signal export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRow {
    pub date: NaiveDate,
    /// `macro` or `micro`.
    pub scale: String,
    pub mean: f64,
    pub p95: f64,
    pub nnz: usize,
    /// Cases over all counties in the 7 days ending on `date`.
    pub national_weekly_incident: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SignalTable {
    pub config_hash: String,
    pub rows: Vec<SignalRow>,
}

/// Edge-weight statistics per anchor for both scales, alongside national
/// weekly incidents. Scales absent from a snapshot (e.g. no state level)
/// are omitted.
pub fn export_signals(
    snapshots: &[(NaiveDate, MultiScaleGraph)],
    truth: &EpidemicPanel,
    index: &LocationIndex,
) -> Result<SignalTable> {
    if snapshots.is_empty() {
        return Err(Error::Domain("no graph snapshots to export".into()));
    }
    let raw = raw_counts(truth, index)?;
    let mut rows = Vec::new();
    for (date, g) in snapshots {
        let a = raw
            .date_position(*date)
            .filter(|&a| a >= 6)
            .ok_or_else(|| Error::Range(format!("snapshot date {date} lacks a full observed week")))?;
        let national = national_weekly(&raw.county.confirmed, a);
        for (scale, stats) in [("macro", g.macro_stats()), ("micro", g.micro_stats())] {
            if let Some(EdgeStats { mean, p95, nnz }) = stats {
                rows.push(SignalRow {
                    date: *date,
                    scale: scale.into(),
                    mean,
                    p95,
                    nnz,
                    national_weekly_incident: national,
                });
            }
        }
    }
    Ok(SignalTable {
        config_hash: String::new(),
        rows,
    })
}

/// Sum over locations of the 7 days ending on day `a`.
pub fn national_weekly(series: &Matrix, a: usize) -> f64 {
    (0..series.rows())
        .map(|i| (a - 6..=a).map(|t| series[(i, t)]).sum::<f64>())
        .sum()
}

impl SignalTable {
    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut d: Vec<NaiveDate> = self.rows.iter().map(|r| r.date).collect();
        d.dedup();
        d
    }

    /// Values of `field` for `scale`, one per date (NaN where absent).
    pub fn column(&self, scale: &str, field: fn(&SignalRow) -> f64) -> Vec<f64> {
        self.dates()
            .iter()
            .map(|d| {
                self.rows
                    .iter()
                    .find(|r| r.date == *d && r.scale == scale)
                    .map_or(f64::NAN, field)
            })
            .collect()
    }

    pub fn national(&self) -> Vec<f64> {
        self.dates()
            .iter()
            .map(|d| {
                self.rows
                    .iter()
                    .find(|r| r.date == *d)
                    .map_or(f64::NAN, |r| r.national_weekly_incident)
            })
            .collect()
    }

    /// `(date of the largest macro mean, date of the incident peak)`;
    /// earliest date wins ties.
    pub fn peak_alignment(&self) -> Option<(NaiveDate, NaiveDate)> {
        let dates = self.dates();
        let argmax = |v: &[f64]| -> Option<usize> {
            v.iter()
                .enumerate()
                .filter(|(_, x)| x.is_finite())
                .fold(None, |best: Option<(usize, f64)>, (i, &x)| match best {
                    Some((_, b)) if b >= x => best,
                    _ => Some((i, x)),
                })
                .map(|b| b.0)
        };
        let m = argmax(&self.column("macro", |r| r.mean))?;
        let n = argmax(&self.national())?;
        Some((dates[m], dates[n]))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(hash_line(&self.config_hash).as_bytes())?;
        let mut w = csv::Writer::from_writer(file);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Two stacked panels: mean edge weight per scale, national incidents.
    pub fn plot_svg(&self) -> String {
        let labels: Vec<String> = self.dates().iter().map(|d| d.format("%m-%d").to_string()).collect();
        let macro_mean = self.column("macro", |r| r.mean);
        let micro_mean = self.column("micro", |r| r.mean);
        let national = self.national();
        let mut top = Vec::new();
        if macro_mean.iter().any(|v| v.is_finite()) {
            top.push(plot::Series {
                label: "macro mean edge weight",
                values: &macro_mean,
            });
        }
        top.push(plot::Series {
            label: "micro mean edge weight",
            values: &micro_mean,
        });
        let svg = plot::line_panels(
            &labels,
            &[
                plot::LinePanel {
                    title: "Learned dependency strength",
                    series: top,
                },
                plot::LinePanel {
                    title: "National weekly incident cases",
                    series: vec![plot::Series {
                        label: "cases",
                        values: &national,
                    }],
                },
            ],
        );
        with_hash_comment(svg, &self.config_hash)
    }
}

/// Mean over windows of the per-window MAPE of the clamped forecast.
/// Windows where every target is zero are skipped.
pub fn window_mape(predictor: &EnsemblePredictor, windows: &[EpidemicWindow]) -> Result<f64> {
    let per = parallel::map(windows, |w| -> Result<f64> {
        let y = predictor.forecast(&w.input)?.map(|v| v.max(0.0));
        Ok(compute_metrics(y.as_slice(), w.y.as_slice())?.mape)
    });
    let per = per.into_iter().collect::<Result<Vec<_>>>()?;
    if per.is_empty() {
        return Err(Error::Domain("no windows to score".into()));
    }
    Ok(finite_mean(per.into_iter()))
}

/// Median of the finite values; NaN if there are none.
pub fn median(values: &[f64]) -> f64 {
    plot::five_numbers(values).map_or(f64::NAN, |f| f[2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    /// Validation MAPE of each seed's own model.
    pub seed_mape: Vec<f64>,
    pub median_mape: f64,
    pub ensemble_mape: f64,
}

/// Trains each variant with `config` (one model per seed) and scores it on
/// the validation windows of the default split.
pub fn ablation_sweep(
    panel: &EpidemicPanel,
    index: &LocationIndex,
    dims: &ModelDims,
    config: &TrainConfig,
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    let (train_set, val_set) = split_windows(panel, index, dims, config)?;
    if val_set.is_empty() {
        return Err(Error::Config("ablation needs validation windows".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let cfg = TrainConfig {
            variant,
            ..config.clone()
        };
        let outcome = train_split(&train_set, &val_set, index, dims, &cfg)?;
        let mut seed_mape = Vec::with_capacity(outcome.runs.len());
        for run in &outcome.runs {
            let single = EnsemblePredictor {
                members: vec![run.params.clone()],
                ..outcome.predictor.clone()
            };
            seed_mape.push(window_mape(&single, &val_set)?);
        }
        let row = AblationRow {
            variant,
            seeds: cfg.seeds.clone(),
            median_mape: median(&seed_mape),
            ensemble_mape: window_mape(&outcome.predictor, &val_set)?,
            seed_mape,
        };
        log::info!("ablation {variant}: median validation MAPE {:.4}", row.median_mape);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], config_hash: &str, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(hash_line(config_hash).as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["variant", "median_val_mape", "ensemble_val_mape", "seed_val_mapes"])?;
    for r in rows {
        let seeds: Vec<String> = r
            .seeds
            .iter()
            .zip(&r.seed_mape)
            .map(|(s, m)| format!("{s}:{m}"))
            .collect();
        w.write_record([
            r.variant.to_string(),
            r.median_mape.to_string(),
            r.ensemble_mape.to_string(),
            seeds.join(" "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::{tiny_index, tiny_panel};
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&[110.0], &[100.0]).unwrap();
        assert!((m.mae - 10.0).abs() < 1e-12 && (m.mape - 0.1).abs() < 1e-12 && (m.rmse - 10.0).abs() < 1e-12);
        let m = compute_metrics(&[1.0, 3.0], &[1.0, 1.0]).unwrap();
        assert_eq!(m.mae, 1.0);
        assert!((m.rmse - 2f64.sqrt()).abs() < 1e-12);
        let m = compute_metrics(&[5.0, 5.0], &[5.0, 5.0]).unwrap();
        assert_eq!((m.mae, m.mape, m.rmse), (0.0, 0.0, 0.0));
        assert!(matches!(compute_metrics(&[], &[]), Err(Error::Domain(_))));
        assert!(compute_metrics(&[1.0], &[0.0]).unwrap().mape.is_nan());
    }

    #[test]
    fn topk_ties_by_fips() {
        let mut idx = tiny_index();
        idx.county_population = vec![10, 30, 20];
        assert_eq!(topk_counties(&idx, 2).unwrap(), vec![1, 2]);
        assert_eq!(topk_counties(&idx, 3).unwrap().len(), 3);
        idx.county_population = vec![5, 5, 5];
        assert_eq!(topk_counties(&idx, 2).unwrap(), vec![0, 1]);
        assert!(matches!(topk_counties(&idx, 0), Err(Error::Domain(_))));
        assert!(matches!(topk_counties(&idx, 4), Err(Error::Domain(_))));
    }

    #[test]
    fn single_week_summary_equals_that_week() {
        let panel = tiny_panel(60);
        let idx = tiny_index();
        let anchor = panel.dates[20];
        let f = persistence_forecast(&panel, &idx, anchor, 3).unwrap();
        let subsets = standard_subsets(&idx, &[2]).unwrap();
        let r = per_week_evaluation(&f, &panel, &idx, &subsets, anchor, anchor, Provenance::default()).unwrap();
        assert!(r.gaps.is_empty());
        for s in &r.summary {
            let w = r
                .weeks
                .iter()
                .find(|w| w.subset == s.subset && w.horizon_weeks == s.horizon_weeks)
                .unwrap();
            assert_eq!(s.metrics, w.metrics);
            assert_eq!(s.weeks, 1);
        }
    }

    #[test]
    fn missing_weeks_are_gaps() {
        let panel = tiny_panel(90);
        let idx = tiny_index();
        let sundays = weekdays_between(panel.dates[14], panel.dates[60], Weekday::Sun);
        let f = persistence_forecast(&panel, &idx, sundays[0], 3).unwrap();
        let subsets = standard_subsets(&idx, &[]).unwrap();
        let r = per_week_evaluation(&f, &panel, &idx, &subsets, sundays[0], sundays[2], Provenance::default())
            .unwrap();
        assert_eq!(r.gaps, sundays[1..3].to_vec());
    }

    #[test]
    fn signals_scale_with_edges_and_sum_counties() {
        let panel = tiny_panel(40);
        let idx = tiny_index();
        let mut g = MultiScaleGraph {
            counties: vec![0, 1, 2],
            states: vec![0, 1],
            a_s: Matrix::zeros(2, 2),
            a_s_norm: Matrix::zeros(2, 2),
            a_c: crate::graph_learning::SparseMatrix {
                n: 3,
                entries: vec![(0, 1, 0.5), (1, 0, 0.25)],
            },
            a_c_norm: crate::graph_learning::SparseMatrix { n: 3, entries: vec![] },
        };
        let t = export_signals(&[(panel.dates[20], g.clone())], &panel, &idx).unwrap();
        let macro_row = t.rows.iter().find(|r| r.scale == "macro").unwrap();
        assert_eq!(macro_row.mean, 0.0);
        let micro = t.rows.iter().find(|r| r.scale == "micro").unwrap().mean;
        g.a_c.entries.iter_mut().for_each(|e| e.2 *= 2.0);
        let t2 = export_signals(&[(panel.dates[20], g)], &panel, &idx).unwrap();
        assert_eq!(t2.rows.iter().find(|r| r.scale == "micro").unwrap().mean, 2.0 * micro);
        let expect: f64 = (14..=20).map(|d| (0..3).map(|i| panel.county.confirmed[(i, d)]).sum::<f64>()).sum();
        assert_eq!(macro_row.national_weekly_incident, expect);
        assert!(matches!(export_signals(&[], &panel, &idx), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn rmse_bounds_mae_and_permutation_invariance(
            pairs in prop::collection::vec((0.0f64..1e4, 0.0f64..1e4), 1..40),
            rot in 0usize..40,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let m = compute_metrics(&a, &b).unwrap();
            prop_assert!(m.rmse >= m.mae * (1.0 - 1e-12));
            let k = rot % a.len();
            let (mut a2, mut b2) = (a.clone(), b.clone());
            a2.rotate_left(k);
            b2.rotate_left(k);
            let m2 = compute_metrics(&a2, &b2).unwrap();
            prop_assert!((m.mae - m2.mae).abs() <= 1e-9 * (1.0 + m.mae));
            prop_assert!((m.rmse - m2.rmse).abs() <= 1e-9 * (1.0 + m.rmse));
        }
    }
}
