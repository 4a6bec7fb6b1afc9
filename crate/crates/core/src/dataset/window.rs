use chrono::{NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use super::calendar::{date_features, weekdays_between, DATE_FEATURES};
use super::{EpidemicPanel, LocationIndex, SeriesBlock, RAW_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Look-back days ending on the anchor (inclusive).
    pub lookback: usize,
    /// Number of weekly targets after the anchor.
    pub horizon_weeks: usize,
    /// Keep every `stride`-th anchor.
    pub stride: usize,
    pub anchor_weekday: Weekday,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            lookback: 14,
            horizon_weeks: 3,
            stride: 1,
            anchor_weekday: Weekday::Sun,
        }
    }
}

/// Model inputs for one anchor date.
///
/// `x_c` is `(M·L_b) × 2` and `x_s` is `(N·L_b) × 2`, rows ordered by
/// location then day; channels are (confirmed, deaths).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub anchor_date: NaiveDate,
    pub anchor_index: usize,
    pub lookback: usize,
    pub x_c: Matrix,
    pub x_s: Matrix,
    /// `L_b × 9`: weekday one-hot, holiday flag, day-of-year / 366.
    pub date_feats: Matrix,
}

impl ModelInput {
    pub fn n_counties(&self) -> usize {
        self.x_c.rows() / self.lookback
    }

    pub fn n_states(&self) -> usize {
        self.x_s.rows() / self.lookback
    }
}

/// One training sample: inputs plus `M × L_a` weekly confirmed-case targets.
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicWindow {
    pub input: ModelInput,
    pub y: Matrix,
}

impl EpidemicWindow {
    pub fn anchor_date(&self) -> NaiveDate {
        self.input.anchor_date
    }
}

fn stack_inputs(block: &SeriesBlock, first: usize, lookback: usize) -> Matrix {
    let k = block.confirmed.rows();
    let mut out = Matrix::zeros(k * lookback, RAW_CHANNELS);
    for loc in 0..k {
        for t in 0..lookback {
            for c in 0..RAW_CHANNELS {
                out[(loc * lookback + t, c)] = block.channel(c)[(loc, first + t)];
            }
        }
    }
    out
}

/// Builds the model input whose look-back window ends on day `anchor_index`.
pub fn model_input(panel: &EpidemicPanel, anchor_index: usize, lookback: usize) -> Result<ModelInput> {
    if lookback == 0 || anchor_index + 1 < lookback || anchor_index >= panel.n_dates() {
        return Err(Error::Range(format!(
            "anchor day {anchor_index} needs {lookback} look-back days inside a {}-day panel",
            panel.n_dates()
        )));
    }
    let first = anchor_index + 1 - lookback;
    let mut date_feats = Matrix::zeros(lookback, DATE_FEATURES);
    for t in 0..lookback {
        date_feats.row_mut(t).copy_from_slice(&date_features(panel.dates[first + t]));
    }
    Ok(ModelInput {
        anchor_date: panel.dates[anchor_index],
        anchor_index,
        lookback,
        x_c: stack_inputs(&panel.county, first, lookback),
        x_s: stack_inputs(&panel.state, first, lookback),
        date_feats,
    })
}

/// `rows × weeks` sums of the 7-day blocks following `anchor_index`.
pub fn weekly_sums(series: &Matrix, anchor_index: usize, weeks: usize) -> Result<Matrix> {
    if anchor_index + 7 * weeks >= series.cols() {
        return Err(Error::Range(format!(
            "{weeks} target weeks after day {anchor_index} exceed {} days",
            series.cols()
        )));
    }
    Ok(Matrix::from_fn(series.rows(), weeks, |i, w| {
        let start = anchor_index + 7 * w + 1;
        (start..start + 7).map(|d| series[(i, d)]).sum()
    }))
}

/// Cuts `panel` into anchor-weekday windows. Anchors whose look-back or
/// target weeks leave the panel are dropped; a panel too short for any
/// window yields an empty list and a warning.
pub fn make_windows(
    panel: &EpidemicPanel,
    index: &LocationIndex,
    spec: WindowSpec,
) -> Result<Vec<EpidemicWindow>> {
    if spec.lookback == 0 || spec.horizon_weeks == 0 || spec.stride == 0 {
        return Err(Error::Config(format!("invalid window spec {spec:?}")));
    }
    if panel.county.confirmed.rows() != index.n_counties()
        || panel.state.confirmed.rows() != index.n_states()
    {
        return Err(Error::Index("panel rows do not match the location index".into()));
    }
    let t = panel.n_dates();
    if t < spec.lookback + 7 * spec.horizon_weeks {
        log::warn!(
            "panel spans {t} days; windows need at least {}",
            spec.lookback + 7 * spec.horizon_weeks
        );
        return Ok(Vec::new());
    }
    let first_anchor = panel.dates[spec.lookback - 1];
    let last_anchor = panel.dates[t - 1 - 7 * spec.horizon_weeks];
    let anchors: Vec<usize> = weekdays_between(first_anchor, last_anchor, spec.anchor_weekday)
        .into_iter()
        .step_by(spec.stride)
        .map(|a| panel.date_position(a).expect("anchor inside panel"))
        .collect();
    windows_at(panel, &anchors, spec)
}

/// Every day that can anchor a complete window (look-back and targets
/// inside the panel), regardless of weekday.
pub fn anchor_days(panel: &EpidemicPanel, spec: WindowSpec) -> Vec<usize> {
    let need = 7 * spec.horizon_weeks;
    if spec.lookback == 0 || panel.n_dates() < spec.lookback + need {
        return Vec::new();
    }
    (spec.lookback - 1..panel.n_dates() - need).collect()
}

/// Windows anchored on the given day positions.
pub fn windows_at(panel: &EpidemicPanel, anchors: &[usize], spec: WindowSpec) -> Result<Vec<EpidemicWindow>> {
    anchors
        .iter()
        .map(|&idx| {
            Ok(EpidemicWindow {
                input: model_input(panel, idx, spec.lookback)?,
                y: weekly_sums(&panel.county.confirmed, idx, spec.horizon_weeks)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::{tiny_index, tiny_panel};
    use super::*;
    use chrono::Datelike;

    fn day(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    /// Brute force over every day of the panel.
    fn anchor_oracle(first: NaiveDate, last: NaiveDate, lb: i64, la: i64) -> Vec<NaiveDate> {
        let mut out = Vec::new();
        let mut d = first;
        while d <= last {
            if d.weekday() == Weekday::Sun
                && d - chrono::Duration::days(lb - 1) >= first
                && d + chrono::Duration::days(7 * la) <= last
            {
                out.push(d);
            }
            d += chrono::Duration::days(1);
        }
        out
    }

    #[test]
    fn first_anchor_needs_full_lookback() {
        // 2021-01-01 ..= 2021-03-31
        let panel = tiny_panel(90);
        assert_eq!(*panel.dates.last().unwrap(), day(2021, 3, 31));
        let w = make_windows(&panel, &tiny_index(), WindowSpec::default()).unwrap();
        let oracle = anchor_oracle(day(2021, 1, 1), day(2021, 3, 31), 14, 3);
        assert_eq!(oracle[0], day(2021, 1, 17));
        assert_eq!(w[0].anchor_date(), day(2021, 1, 17));
        let got: Vec<_> = w.iter().map(|w| w.anchor_date()).collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn constant_incidents_give_weekly_seventy() {
        let mut panel = tiny_panel(60);
        panel.county.confirmed = Matrix::filled(3, 60, 10.0);
        let w = make_windows(&panel, &tiny_index(), WindowSpec::default()).unwrap();
        assert!(w.iter().all(|w| w.y.as_slice().iter().all(|&v| v == 70.0)));
    }

    #[test]
    fn inputs_follow_location_then_day_layout() {
        let panel = tiny_panel(40);
        let w = &make_windows(&panel, &tiny_index(), WindowSpec::default()).unwrap()[0];
        let a = w.input.anchor_index;
        let lb = 14;
        assert_eq!(w.input.x_c.shape(), (3 * lb, 2));
        assert_eq!(w.input.x_s.shape(), (2 * lb, 2));
        assert_eq!(w.input.x_c[(2 * lb + lb - 1, 0)], panel.county.confirmed[(2, a)]);
        assert_eq!(w.input.x_c[(lb, 1)], panel.county.deaths[(1, a + 1 - lb)]);
        assert_eq!(w.input.date_feats[(lb - 1, 6)], 1.0);
        // target week 1 equals the 7 days after the anchor
        let s: f64 = (a + 1..a + 8).map(|d| panel.county.confirmed[(0, d)]).sum();
        assert_eq!(w.y[(0, 0)], s);
    }

    #[test]
    fn daily_anchors_cover_every_feasible_day() {
        let panel = tiny_panel(40);
        let days = anchor_days(&panel, WindowSpec::default());
        assert_eq!(days.first(), Some(&13));
        assert_eq!(days.last(), Some(&(40 - 22)));
        let weekly = make_windows(&panel, &tiny_index(), WindowSpec::default()).unwrap();
        assert!(weekly.iter().all(|w| days.contains(&w.input.anchor_index)));
    }

    #[test]
    fn short_panel_gives_no_windows() {
        let panel = tiny_panel(20);
        assert!(make_windows(&panel, &tiny_index(), WindowSpec::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn window_count_matches_oracle_over_many_lengths() {
        for len in 35..120 {
            let panel = tiny_panel(len);
            let w = make_windows(&panel, &tiny_index(), WindowSpec::default()).unwrap();
            let oracle = anchor_oracle(panel.dates[0], *panel.dates.last().unwrap(), 14, 3);
            assert_eq!(w.len(), oracle.len(), "len {len}");
        }
    }
}
