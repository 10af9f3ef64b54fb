//! County forecasts, state aggregation, the persistence baseline, the
//! two-model ensemble, and MAE scoring per horizon and period.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;

use crate::checkpoint::Checkpoint;
use crate::data::{geo, Dataset, Level, StandardizedSet};
use crate::error::{CourageError, Result};
use crate::model::forward;

/// Model names used across CSVs and reports.
pub const MODEL_NAIVE: &str = "Naive";
pub const MODEL_COUNTY: &str = "County";
pub const MODEL_MIXUP: &str = "Mixup";
pub const MODEL_STATE: &str = "State";
pub const MODEL_ENSEMBLE: &str = "COURAGE";

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEntry {
    pub location: String,
    pub location_name: String,
    pub anchor: NaiveDate,
    pub week1: f64,
    pub week2: f64,
}

/// Per-location two-week predictions of one model, canonically sorted by
/// (anchor, location) so sums and comparisons are order-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    pub model: String,
    pub entries: Vec<ForecastEntry>,
}

impl ForecastSet {
    pub fn new(model: impl Into<String>, mut entries: Vec<ForecastEntry>) -> Self {
        entries.sort_by(|a, b| (a.anchor, &a.location).cmp(&(b.anchor, &b.location)));
        ForecastSet {
            model: model.into(),
            entries,
        }
    }

    pub fn keys(&self) -> BTreeSet<(NaiveDate, String)> {
        self.entries
            .iter()
            .map(|e| (e.anchor, e.location.clone()))
            .collect()
    }

    pub fn anchors(&self) -> BTreeSet<NaiveDate> {
        self.entries.iter().map(|e| e.anchor).collect()
    }
}

/// Runs the checkpointed model over standardized windows and maps the
/// outputs back to death counts, clamping negatives to zero.
///
/// The window set must have been standardized by the checkpoint's own
/// standardizer; the digests are compared to prevent silent scale mixups.
pub fn predict(
    checkpoint: &Checkpoint,
    windows: &StandardizedSet,
    names: &BTreeMap<String, String>,
) -> Result<ForecastSet> {
    if windows.digest != checkpoint.standardizer.digest() {
        return Err(CourageError::contract(
            "window set was standardized with a different standardizer than the checkpoint",
        ));
    }
    let mut entries = Vec::with_capacity(windows.samples.len());
    for sample in &windows.samples {
        let (z1, z2) = forward(&checkpoint.params, &checkpoint.config, &sample.features)?;
        let (w1, w2) = checkpoint.standardizer.destandardize_targets(z1, z2);
        entries.push(ForecastEntry {
            location: sample.location.clone(),
            location_name: names
                .get(&sample.location)
                .cloned()
                .unwrap_or_else(|| sample.location.clone()),
            anchor: sample.anchor,
            week1: w1.max(0.0),
            week2: w2.max(0.0),
        });
    }
    Ok(ForecastSet::new(checkpoint.label.clone(), entries))
}

/// Sums county predictions into their states in ascending FIPS order, so
/// the floating-point result is reproducible bit for bit.
pub fn aggregate_to_state(county: &ForecastSet) -> Result<ForecastSet> {
    let mut by_state: BTreeMap<(NaiveDate, String), (f64, f64)> = BTreeMap::new();
    // Entries are sorted by (anchor, location) = ascending FIPS per anchor.
    for entry in &county.entries {
        let fips: u32 = entry.location.parse().map_err(|_| {
            CourageError::contract(format!(
                "cannot aggregate non-county location '{}'",
                entry.location
            ))
        })?;
        let state = geo::state_of_fips(fips).ok_or_else(|| {
            CourageError::contract(format!("county {fips} has no known state"))
        })?;
        let slot = by_state.entry((entry.anchor, state.to_string())).or_insert((0.0, 0.0));
        slot.0 += entry.week1;
        slot.1 += entry.week2;
    }
    let entries = by_state
        .into_iter()
        .map(|((anchor, state), (week1, week2))| ForecastEntry {
            location_name: geo::state_name_of_postal(&state).unwrap_or(&state).to_string(),
            location: state,
            anchor,
            week1,
            week2,
        })
        .collect();
    Ok(ForecastSet::new(county.model.clone(), entries))
}

/// Persistence baseline: both horizons copy the raw reported death total of
/// the week ending at the anchor. Locations with fewer than 7 days of
/// history at an anchor are omitted.
pub fn naive_forecast(dataset: &Dataset, level: Level, anchors: &[NaiveDate]) -> ForecastSet {
    let mut entries = Vec::new();
    for series in dataset.locations(level) {
        for &anchor in anchors {
            let Some(idx) = dataset.index_of(anchor) else {
                continue;
            };
            if let Some(week0) = series.week0_deaths(idx) {
                entries.push(ForecastEntry {
                    location: series.location.clone(),
                    location_name: series.name.clone(),
                    anchor,
                    week1: week0,
                    week2: week0,
                });
            }
        }
    }
    ForecastSet::new(MODEL_NAIVE, entries)
}

/// Elementwise mean of two forecast sets over identical keys.
pub fn ensemble_average(a: &ForecastSet, b: &ForecastSet, name: &str) -> Result<ForecastSet> {
    let keys_a = a.keys();
    let keys_b = b.keys();
    if keys_a != keys_b {
        let only_a: Vec<String> = keys_a
            .difference(&keys_b)
            .take(5)
            .map(|(d, l)| format!("{l}@{d}"))
            .collect();
        let only_b: Vec<String> = keys_b
            .difference(&keys_a)
            .take(5)
            .map(|(d, l)| format!("{l}@{d}"))
            .collect();
        return Err(CourageError::KeyMismatch(format!(
            "only in {}: [{}]; only in {}: [{}]",
            a.model,
            only_a.join(", "),
            b.model,
            only_b.join(", ")
        )));
    }
    // Both sets are canonically sorted, so rows align pairwise.
    let entries = a
        .entries
        .iter()
        .zip(&b.entries)
        .map(|(x, y)| ForecastEntry {
            location: x.location.clone(),
            location_name: x.location_name.clone(),
            anchor: x.anchor,
            week1: (x.week1 + y.week1) / 2.0,
            week2: (x.week2 + y.week2) / 2.0,
        })
        .collect();
    Ok(ForecastSet::new(name, entries))
}

/// Which series the evaluation truth comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthKind {
    /// Raw reported weekly death totals (default).
    Raw,
    /// Weekly totals of the 7-day-smoothed series, for sensitivity checks.
    Smoothed,
}

impl std::str::FromStr for TruthKind {
    type Err = CourageError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(TruthKind::Raw),
            "smoothed" => Ok(TruthKind::Smoothed),
            other => Err(CourageError::config(format!(
                "unknown truth kind '{other}' (expected 'raw' or 'smoothed')"
            ))),
        }
    }
}

/// Observed weekly totals keyed by (location, anchor).
#[derive(Debug, Clone, Default)]
pub struct TruthTable {
    map: BTreeMap<(String, NaiveDate), (f64, f64)>,
}

impl TruthTable {
    pub fn get(&self, location: &str, anchor: NaiveDate) -> Option<(f64, f64)> {
        self.map.get(&(location.to_string(), anchor)).copied()
    }

    /// Merges another table in; duplicate keys keep the incoming value.
    pub fn extend(&mut self, other: TruthTable) {
        self.map.extend(other.map);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Builds the truth for every location of `level` at the given anchors.
pub fn truth_table(
    dataset: &Dataset,
    level: Level,
    anchors: &[NaiveDate],
    kind: TruthKind,
) -> TruthTable {
    let mut map = BTreeMap::new();
    for series in dataset.locations(level) {
        for &anchor in anchors {
            let Some(idx) = dataset.index_of(anchor) else {
                continue;
            };
            let totals = match kind {
                TruthKind::Raw => series.truth_weeks(idx),
                TruthKind::Smoothed => series.truth_weeks_smoothed(idx),
            };
            if let Some(t) = totals {
                map.insert((series.location.clone(), anchor), t);
            }
        }
    }
    TruthTable { map }
}

/// Mean absolute error per horizon over every (location, anchor) in the
/// forecast set. Every entry must have a truth value.
pub fn mae(forecast: &ForecastSet, truth: &TruthTable) -> Result<(f64, f64)> {
    if forecast.entries.is_empty() {
        return Err(CourageError::contract("mae over an empty forecast set"));
    }
    let mut sum1 = 0.0;
    let mut sum2 = 0.0;
    for entry in &forecast.entries {
        let (t1, t2) = truth.get(&entry.location, entry.anchor).ok_or_else(|| {
            CourageError::contract(format!(
                "missing truth for {} at {}",
                entry.location, entry.anchor
            ))
        })?;
        sum1 += (entry.week1 - t1).abs();
        sum2 += (entry.week2 - t2).abs();
    }
    let n = forecast.entries.len() as f64;
    Ok((sum1 / n, sum2 / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub level: Level,
    /// 1 or 2.
    pub horizon: u8,
    pub period_start: NaiveDate,
    pub period_end: NaiveDate,
    /// `None` when the period contains no anchors (absence, not zero).
    pub mae: Option<f64>,
    pub n_anchors: usize,
    pub n_locations: usize,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    /// Forecast anchors that fell outside every period, per model.
    pub excluded_anchors: BTreeMap<String, usize>,
}

/// The five non-overlapping backtest periods used by the default reports.
pub fn default_periods() -> Vec<(NaiveDate, NaiveDate)> {
    let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).unwrap();
    vec![
        (d(2020, 8, 23), d(2020, 9, 24)),
        (d(2020, 9, 25), d(2020, 10, 28)),
        (d(2020, 10, 29), d(2020, 12, 1)),
        (d(2020, 12, 2), d(2021, 1, 17)),
        (d(2021, 1, 18), d(2021, 3, 14)),
    ]
}

fn infer_level(location: &str) -> Level {
    if location.len() == 2 && location.chars().all(|c| c.is_ascii_alphabetic()) {
        Level::State
    } else {
        Level::County
    }
}

/// MAE per (model, level, horizon, period). Anchors outside every period
/// are excluded and counted.
pub fn evaluate_periods(
    forecasts: &[ForecastSet],
    truth: &TruthTable,
    periods: &[(NaiveDate, NaiveDate)],
) -> Result<EvalReport> {
    if periods.is_empty() {
        return Err(CourageError::config("no evaluation periods given"));
    }
    for pair in periods.windows(2) {
        if pair[0].1 >= pair[1].0 {
            return Err(CourageError::config(format!(
                "periods must be sorted and non-overlapping: {:?} then {:?}",
                pair[0], pair[1]
            )));
        }
    }
    for (start, end) in periods {
        if start > end {
            return Err(CourageError::config(format!(
                "period start {start} after end {end}"
            )));
        }
    }

    let mut report = EvalReport::default();
    for set in forecasts {
        let mut excluded: BTreeSet<NaiveDate> = set.anchors();
        let mut by_level: BTreeMap<&'static str, Vec<&ForecastEntry>> = BTreeMap::new();
        for entry in &set.entries {
            by_level
                .entry(infer_level(&entry.location).as_str())
                .or_default()
                .push(entry);
        }

        for (level_name, entries) in by_level {
            let level = if level_name == "state" {
                Level::State
            } else {
                Level::County
            };
            for &(start, end) in periods {
                let in_period: Vec<&&ForecastEntry> = entries
                    .iter()
                    .filter(|e| e.anchor >= start && e.anchor <= end)
                    .collect();
                for e in &in_period {
                    excluded.remove(&e.anchor);
                }
                let anchors: BTreeSet<NaiveDate> = in_period.iter().map(|e| e.anchor).collect();
                let locations: BTreeSet<&str> =
                    in_period.iter().map(|e| e.location.as_str()).collect();

                let maes = if in_period.is_empty() {
                    (None, None)
                } else {
                    let mut sum1 = 0.0;
                    let mut sum2 = 0.0;
                    for e in &in_period {
                        let (t1, t2) = truth.get(&e.location, e.anchor).ok_or_else(|| {
                            CourageError::contract(format!(
                                "missing truth for {} at {}",
                                e.location, e.anchor
                            ))
                        })?;
                        sum1 += (e.week1 - t1).abs();
                        sum2 += (e.week2 - t2).abs();
                    }
                    let n = in_period.len() as f64;
                    (Some(sum1 / n), Some(sum2 / n))
                };

                for (horizon, mae) in [(1u8, maes.0), (2u8, maes.1)] {
                    report.rows.push(ReportRow {
                        model: set.model.clone(),
                        level,
                        horizon,
                        period_start: start,
                        period_end: end,
                        mae,
                        n_anchors: anchors.len(),
                        n_locations: locations.len(),
                    });
                }
            }
        }
        if !excluded.is_empty() {
            report.excluded_anchors.insert(set.model.clone(), excluded.len());
        }
    }
    Ok(report)
}

/// Writes one forecast set as `model,anchor_date,location_id,location_name,
/// week1_pred,week2_pred`.
pub fn write_forecast_csv(set: &ForecastSet, path: &Path) -> Result<()> {
    let label = path.display().to_string();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CourageError::io(&label, std::io::Error::other(e)))?;
    let io_err = |e: csv::Error| CourageError::io(&label, std::io::Error::other(e));
    w.write_record([
        "model",
        "anchor_date",
        "location_id",
        "location_name",
        "week1_pred",
        "week2_pred",
    ])
    .map_err(io_err)?;
    for e in &set.entries {
        w.write_record([
            set.model.as_str(),
            &e.anchor.format("%Y-%m-%d").to_string(),
            &e.location,
            &e.location_name,
            &format!("{}", e.week1),
            &format!("{}", e.week2),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| CourageError::io(&label, e))
}

/// Reads forecast CSVs back, grouping rows by model name.
pub fn read_forecast_csv(path: &Path) -> Result<Vec<ForecastSet>> {
    let label = path.display().to_string();
    if !path.exists() {
        return Err(CourageError::MissingInput(label));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| CourageError::Format {
        path: label.clone(),
        line: None,
        message: e.to_string(),
    })?;
    let mut by_model: BTreeMap<String, Vec<ForecastEntry>> = BTreeMap::new();
    for (line_no, record) in reader.records().enumerate() {
        let line = Some(line_no as u64 + 2);
        let record = record.map_err(|e| CourageError::Format {
            path: label.clone(),
            line,
            message: e.to_string(),
        })?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let parse_f64 = |i: usize| -> Result<f64> {
            record
                .get(i)
                .unwrap_or("")
                .parse()
                .map_err(|_| CourageError::Format {
                    path: label.clone(),
                    line,
                    message: format!("bad float '{}'", field(i)),
                })
        };
        let anchor = NaiveDate::parse_from_str(&field(1), "%Y-%m-%d").map_err(|_| {
            CourageError::Format {
                path: label.clone(),
                line,
                message: format!("bad date '{}'", field(1)),
            }
        })?;
        by_model.entry(field(0)).or_default().push(ForecastEntry {
            location: field(2),
            location_name: field(3),
            anchor,
            week1: parse_f64(4)?,
            week2: parse_f64(5)?,
        });
    }
    Ok(by_model
        .into_iter()
        .map(|(model, entries)| ForecastSet::new(model, entries))
        .collect())
}

/// Writes the period report as `model,split,level,horizon,period_start,
/// period_end,mae,n_anchors,n_locations`; empty periods leave mae blank.
pub fn write_report_csv(report: &EvalReport, split_label: &str, path: &Path) -> Result<()> {
    let label = path.display().to_string();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CourageError::io(&label, std::io::Error::other(e)))?;
    let io_err = |e: csv::Error| CourageError::io(&label, std::io::Error::other(e));
    w.write_record([
        "model",
        "split",
        "level",
        "horizon",
        "period_start",
        "period_end",
        "mae",
        "n_anchors",
        "n_locations",
    ])
    .map_err(io_err)?;
    for row in &report.rows {
        w.write_record([
            row.model.as_str(),
            split_label,
            row.level.as_str(),
            &format!("week{}", row.horizon),
            &row.period_start.format("%Y-%m-%d").to_string(),
            &row.period_end.format("%Y-%m-%d").to_string(),
            &row.mae.map(|m| format!("{m}")).unwrap_or_default(),
            &row.n_anchors.to_string(),
            &row.n_locations.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| CourageError::io(&label, e))
}
