//! Sliding-window sample construction and the date-based train/test split.

use chrono::{Days, NaiveDate};

use crate::data::{Dataset, Level, LocationSeries, SampleWindow};
use crate::error::{CourageError, Result};

/// All windows of `window_len` days for one location at the given stride.
/// Every window needs 14 future days for its targets, so locations with
/// fewer than `window_len + 14` days contribute nothing.
pub fn build_windows(
    series: &LocationSeries,
    start: NaiveDate,
    window_len: usize,
    stride: usize,
) -> Vec<SampleWindow> {
    assert!(stride >= 1, "stride must be >= 1");
    let days = series.days();
    if days < window_len + 14 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut anchor_idx = window_len - 1;
    while anchor_idx + 14 < days {
        out.push(window_at(series, start, anchor_idx, window_len));
        anchor_idx += stride;
    }
    out
}

/// Windows for explicit anchor dates (evaluation uses a weekly grid).
/// Anchors without enough history or enough future days are skipped.
pub fn build_windows_at(
    series: &LocationSeries,
    start: NaiveDate,
    window_len: usize,
    anchors: &[NaiveDate],
) -> Vec<SampleWindow> {
    let days = series.days();
    let mut out = Vec::new();
    for &anchor in anchors {
        let offset = (anchor - start).num_days();
        if offset < 0 {
            continue;
        }
        let anchor_idx = offset as usize;
        if anchor_idx + 1 >= window_len && anchor_idx + 14 < days {
            out.push(window_at(series, start, anchor_idx, window_len));
        }
    }
    out
}

fn window_at(
    series: &LocationSeries,
    start: NaiveDate,
    anchor_idx: usize,
    window_len: usize,
) -> SampleWindow {
    let features = series.features_at(anchor_idx, window_len);
    let target_week1: f64 = series.smoothed_deaths[anchor_idx + 1..=anchor_idx + 7]
        .iter()
        .sum();
    let target_week2: f64 = series.smoothed_deaths[anchor_idx + 8..=anchor_idx + 14]
        .iter()
        .sum();
    SampleWindow {
        location: series.location.clone(),
        level: series.level,
        state: series.state.clone(),
        anchor: start + Days::new(anchor_idx as u64),
        features,
        target_week1,
        target_week2,
    }
}

/// Weekly evaluation anchors: the first test-period day, then every 7 days
/// while two full target weeks still fit before `last_date`.
pub fn eval_anchors(cutoff: NaiveDate, last_date: NaiveDate, stride: usize) -> Vec<NaiveDate> {
    assert!(stride >= 1);
    let mut out = Vec::new();
    let mut anchor = cutoff + Days::new(1);
    while anchor + Days::new(14) <= last_date {
        out.push(anchor);
        anchor = anchor + Days::new(stride as u64);
    }
    out
}

/// Cutoff date placing `fraction` of the dataset's dates in the train
/// period: the train period keeps the first `floor(fraction * n_dates)`
/// calendar days.
pub fn split_cutoff(fraction: f64, first: NaiveDate, last: NaiveDate) -> Result<NaiveDate> {
    if !(0.0..=1.0).contains(&fraction) || fraction == 0.0 || fraction == 1.0 {
        return Err(CourageError::config(format!(
            "split fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let n_dates = (last - first).num_days() + 1;
    if n_dates < 2 {
        return Err(CourageError::config("date range too short to split"));
    }
    let train_dates = ((fraction * n_dates as f64).floor() as u64).max(1);
    Ok(first + Days::new(train_dates - 1))
}

#[derive(Debug)]
pub struct SplitOutcome {
    /// Last date of the train period; the test period starts the next day.
    pub cutoff: NaiveDate,
    pub train: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

/// Splits windows by anchor date around the fraction cutoff. A train window
/// must have BOTH target weeks inside the train period (anchor + 14 days on
/// or before the cutoff); windows straddling the boundary are dropped so no
/// training target overlaps the test period.
pub fn split(
    windows: Vec<SampleWindow>,
    fraction: f64,
    first: NaiveDate,
    last: NaiveDate,
) -> Result<SplitOutcome> {
    let cutoff = split_cutoff(fraction, first, last)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for w in windows {
        if w.anchor + Days::new(14) <= cutoff {
            train.push(w);
        } else if w.anchor > cutoff {
            test.push(w);
        }
    }
    Ok(SplitOutcome { cutoff, train, test })
}

/// Checks the no-leakage invariant on an existing split: the last train
/// anchor plus both target weeks must not reach past the first test target
/// day.
pub fn assert_no_leakage(outcome: &SplitOutcome) -> Result<()> {
    let max_train = outcome.train.iter().map(|w| w.anchor).max();
    let min_test = outcome.test.iter().map(|w| w.anchor).min();
    if let (Some(max_train), Some(min_test)) = (max_train, min_test) {
        if max_train + Days::new(14) > min_test {
            return Err(CourageError::contract(format!(
                "train targets (anchor {max_train} + 14d) overlap test period starting {min_test}"
            )));
        }
    }
    Ok(())
}

/// Convenience: stride-1 training windows for every location of a level.
pub fn all_windows(dataset: &Dataset, level: Level, window_len: usize, stride: usize) -> Vec<SampleWindow> {
    dataset
        .locations(level)
        .iter()
        .flat_map(|series| build_windows(series, dataset.start, window_len, stride))
        .collect()
}
