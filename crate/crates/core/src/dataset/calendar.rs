//! Calendar helpers: US federal holidays, per-day date features, anchors.

use chrono::{Datelike, NaiveDate, Weekday};

/// Observed US federal holidays, 2020 and 2021.
const FEDERAL_HOLIDAYS: &[(i32, u32, u32)] = &[
    (2020, 1, 1),
    (2020, 1, 20),
    (2020, 2, 17),
    (2020, 5, 25),
    (2020, 7, 3),
    (2020, 9, 7),
    (2020, 10, 12),
    (2020, 11, 11),
    (2020, 11, 26),
    (2020, 12, 25),
    (2021, 1, 1),
    (2021, 1, 18),
    (2021, 2, 15),
    (2021, 5, 31),
    (2021, 6, 18),
    (2021, 7, 5),
    (2021, 9, 6),
    (2021, 10, 11),
    (2021, 11, 11),
    (2021, 11, 25),
    (2021, 12, 24),
];

/// Width of the per-day date feature vector: weekday one-hot (7), holiday
/// flag, day-of-year fraction.
pub const DATE_FEATURES: usize = 9;

pub fn is_federal_holiday(date: NaiveDate) -> bool {
    FEDERAL_HOLIDAYS
        .iter()
        .any(|&(y, m, d)| date.year() == y && date.month() == m && date.day() == d)
}

/// Index of `date`'s weekday in the one-hot block (Monday = 0 … Sunday = 6).
pub fn weekday_slot(date: NaiveDate) -> usize {
    date.weekday().num_days_from_monday() as usize
}

pub fn date_features(date: NaiveDate) -> [f64; DATE_FEATURES] {
    let mut f = [0.0; DATE_FEATURES];
    f[weekday_slot(date)] = 1.0;
    f[7] = if is_federal_holiday(date) { 1.0 } else { 0.0 };
    f[8] = date.ordinal() as f64 / 366.0;
    f
}

/// All dates in `[first, last]` falling on `weekday`.
pub fn weekdays_between(first: NaiveDate, last: NaiveDate, weekday: Weekday) -> Vec<NaiveDate> {
    let offset = (7 + weekday.num_days_from_monday() as i64
        - first.weekday().num_days_from_monday() as i64)
        % 7;
    let mut out = Vec::new();
    let mut d = first + chrono::Duration::days(offset);
    while d <= last {
        out.push(d);
        d += chrono::Duration::days(7);
    }
    out
}

pub fn parse_weekday(s: &str) -> Option<Weekday> {
    s.parse().ok()
}
