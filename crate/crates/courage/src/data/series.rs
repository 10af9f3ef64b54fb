//! Per-location daily series: cleaning, smoothing, mobility imputation,
//! feature assembly and county-to-state consolidation.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::data::{geo, jhu::CountyCounts, mobility::MobilityRecord, DailyRecord, Level};
use crate::data::{FEATURE_DIM, ROW_LOG_POPULATION, ROW_MOBILITY_FIRST};
use crate::error::{CourageError, Result};
use crate::numerics::Matrix;

/// How many days a mobility gap may be forward-filled before falling back
/// to 0 (no change from baseline).
pub const MOBILITY_FFILL_LIMIT: usize = 14;

/// New daily counts from a cumulative series; the first day keeps its
/// cumulative value. The input is expected to be non-decreasing (cleaned),
/// so the output is non-negative.
pub fn cumulative_to_new(cumulative: &[u64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(cumulative.len());
    let mut prev = 0u64;
    for &v in cumulative {
        out.push(v.saturating_sub(prev) as f64);
        prev = v;
    }
    out
}

/// Running maximum, which makes revision-afflicted cumulative series
/// non-decreasing.
pub fn clean_cumulative(raw: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut max = 0u64;
    for &v in raw {
        max = max.max(v);
        out.push(max);
    }
    out
}

/// Trailing 7-day mean; the window is truncated at the start of the series.
pub fn smooth7(series: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut window_sum = 0.0;
    for t in 0..series.len() {
        window_sum += series[t];
        if t >= 7 {
            window_sum -= series[t - 7];
        }
        let len = (t + 1).min(7) as f64;
        out.push(window_sum / len);
    }
    out
}

/// Fills `NaN` gaps by carrying the last observation forward for at most
/// `max_ffill` days; anything still missing becomes 0.
pub fn impute_gaps(values: &mut [f64], max_ffill: usize) {
    let mut last: Option<(usize, f64)> = None;
    for (t, value) in values.iter_mut().enumerate() {
        if value.is_nan() {
            *value = match last {
                Some((seen, v)) if t - seen <= max_ffill => v,
                _ => 0.0,
            };
        } else {
            last = Some((t, *value));
        }
    }
}

/// Daily series of one location over the shared date axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationSeries {
    pub location: String,
    pub level: Level,
    pub name: String,
    /// Postal code of the containing (or own) state.
    pub state: String,
    pub population: f64,
    pub new_cases: Vec<f64>,
    pub new_deaths: Vec<f64>,
    pub smoothed_cases: Vec<f64>,
    pub smoothed_deaths: Vec<f64>,
    pub mobility: [Vec<f64>; 6],
}

impl LocationSeries {
    pub fn days(&self) -> usize {
        self.new_cases.len()
    }

    /// FEATURE_DIM x L feature block for the window of `window_len` days
    /// ending at day index `anchor_idx`.
    pub fn features_at(&self, anchor_idx: usize, window_len: usize) -> Matrix {
        let start = anchor_idx + 1 - window_len;
        let mut m = Matrix::zeros(FEATURE_DIM, window_len);
        for (col, t) in (start..=anchor_idx).enumerate() {
            m.set(0, col, self.new_cases[t]);
            m.set(1, col, self.new_deaths[t]);
            m.set(2, col, self.smoothed_cases[t]);
            m.set(3, col, self.smoothed_deaths[t]);
            for cat in 0..6 {
                m.set(ROW_MOBILITY_FIRST + cat, col, self.mobility[cat][t]);
            }
            m.set(ROW_LOG_POPULATION, col, self.population.log10());
        }
        m
    }

    /// Sum of raw reported daily deaths over the 7 days ending at
    /// `anchor_idx` (week 0).
    pub fn week0_deaths(&self, anchor_idx: usize) -> Option<f64> {
        if anchor_idx + 1 < 7 || anchor_idx >= self.days() {
            return None;
        }
        Some(self.new_deaths[anchor_idx - 6..=anchor_idx].iter().sum())
    }

    /// Raw weekly death totals over the two weeks after `anchor_idx`.
    pub fn truth_weeks(&self, anchor_idx: usize) -> Option<(f64, f64)> {
        if anchor_idx + 14 >= self.days() {
            return None;
        }
        let w1: f64 = self.new_deaths[anchor_idx + 1..=anchor_idx + 7].iter().sum();
        let w2: f64 = self.new_deaths[anchor_idx + 8..=anchor_idx + 14].iter().sum();
        Some((w1, w2))
    }

    /// Same totals computed from the smoothed series, for the sensitivity
    /// variant of the truth.
    pub fn truth_weeks_smoothed(&self, anchor_idx: usize) -> Option<(f64, f64)> {
        if anchor_idx + 14 >= self.days() {
            return None;
        }
        let w1: f64 = self.smoothed_deaths[anchor_idx + 1..=anchor_idx + 7].iter().sum();
        let w2: f64 = self.smoothed_deaths[anchor_idx + 8..=anchor_idx + 14].iter().sum();
        Some((w1, w2))
    }
}

/// The fully ingested dataset: county and state series over one date axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub start: NaiveDate,
    pub n_days: usize,
    /// Ascending FIPS order.
    pub counties: Vec<LocationSeries>,
    /// Ascending postal-code order.
    pub states: Vec<LocationSeries>,
}

impl Dataset {
    pub fn first_date(&self) -> NaiveDate {
        self.start
    }

    pub fn last_date(&self) -> NaiveDate {
        self.start + chrono::Days::new(self.n_days as u64 - 1)
    }

    pub fn date_at(&self, idx: usize) -> NaiveDate {
        self.start + chrono::Days::new(idx as u64)
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let delta = (date - self.start).num_days();
        (0..self.n_days as i64).contains(&delta).then_some(delta as usize)
    }

    pub fn locations(&self, level: Level) -> &[LocationSeries] {
        match level {
            Level::County => &self.counties,
            Level::State => &self.states,
        }
    }

    pub fn find(&self, location: &str) -> Option<&LocationSeries> {
        self.counties
            .iter()
            .chain(&self.states)
            .find(|s| s.location == location)
    }

    /// Flattens the dataset back into per-day records, the row form used by
    /// parsing and its tests.
    pub fn daily_records(&self, level: Level) -> Vec<DailyRecord> {
        let mut out = Vec::new();
        for loc in self.locations(level) {
            let mut cum_cases = 0u64;
            let mut cum_deaths = 0u64;
            for t in 0..self.n_days {
                cum_cases += loc.new_cases[t] as u64;
                cum_deaths += loc.new_deaths[t] as u64;
                out.push(DailyRecord {
                    location: loc.location.clone(),
                    level,
                    date: self.date_at(t),
                    cumulative_cases: cum_cases,
                    cumulative_deaths: cum_deaths,
                    mobility: [
                        loc.mobility[0][t],
                        loc.mobility[1][t],
                        loc.mobility[2][t],
                        loc.mobility[3][t],
                        loc.mobility[4][t],
                        loc.mobility[5][t],
                    ],
                    population: loc.population as u64,
                });
            }
        }
        out
    }
}

/// Joins parsed county counts with mobility, imputes gaps, derives the
/// smoothed series, and consolidates counties into state series.
pub fn build_dataset(
    start: NaiveDate,
    n_days: usize,
    counties: Vec<CountyCounts>,
    mobility: &[MobilityRecord],
) -> Result<Dataset> {
    if counties.is_empty() {
        return Err(CourageError::Format {
            path: "<jhu>".into(),
            line: None,
            message: "no mainland counties in input".into(),
        });
    }

    let mut mobility_by_fips: BTreeMap<u32, Vec<(usize, [f64; 6])>> = BTreeMap::new();
    let start_ce = start;
    for rec in mobility {
        let offset = (rec.date - start_ce).num_days();
        if offset < 0 || offset >= n_days as i64 {
            continue;
        }
        mobility_by_fips
            .entry(rec.fips)
            .or_default()
            .push((offset as usize, rec.values));
    }

    let mut county_series = Vec::with_capacity(counties.len());
    for county in counties {
        let state = geo::state_of_fips(county.fips).ok_or_else(|| {
            CourageError::Format {
                path: "<jhu>".into(),
                line: None,
                message: format!("county fips {} outside mainland states", county.fips),
            }
        })?;
        if county.population == 0 {
            log::warn!(
                "county {} has zero population; dropped",
                geo::fips_key(county.fips)
            );
            continue;
        }
        let new_cases = cumulative_to_new(&county.cumulative_cases);
        let new_deaths = cumulative_to_new(&county.cumulative_deaths);
        let smoothed_cases = smooth7(&new_cases);
        let smoothed_deaths = smooth7(&new_deaths);

        let mut mobility_series: [Vec<f64>; 6] =
            std::array::from_fn(|_| vec![f64::NAN; n_days]);
        if let Some(obs) = mobility_by_fips.get(&county.fips) {
            for (t, values) in obs {
                for (cat, series) in mobility_series.iter_mut().enumerate() {
                    if !values[cat].is_nan() {
                        series[*t] = values[cat];
                    }
                }
            }
        }
        for series in &mut mobility_series {
            impute_gaps(series, MOBILITY_FFILL_LIMIT);
        }

        county_series.push(LocationSeries {
            location: geo::fips_key(county.fips),
            level: Level::County,
            name: county.name,
            state: state.to_string(),
            population: county.population as f64,
            new_cases,
            new_deaths,
            smoothed_cases,
            smoothed_deaths,
            mobility: mobility_series,
        });
    }
    county_series.sort_by(|a, b| a.location.cmp(&b.location));

    let states = aggregate_states(&county_series, n_days);
    Ok(Dataset {
        start,
        n_days,
        counties: county_series,
        states,
    })
}

/// Sums county series into state series; mobility becomes the
/// population-weighted mean of the member counties.
pub fn aggregate_states(counties: &[LocationSeries], n_days: usize) -> Vec<LocationSeries> {
    let mut by_state: BTreeMap<String, Vec<&LocationSeries>> = BTreeMap::new();
    for county in counties {
        by_state.entry(county.state.clone()).or_default().push(county);
    }

    let mut states = Vec::with_capacity(by_state.len());
    for (postal, members) in by_state {
        let mut new_cases = vec![0.0; n_days];
        let mut new_deaths = vec![0.0; n_days];
        let mut mobility: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; n_days]);
        let mut population = 0.0;
        for county in &members {
            population += county.population;
            for t in 0..n_days {
                new_cases[t] += county.new_cases[t];
                new_deaths[t] += county.new_deaths[t];
                for (cat, series) in mobility.iter_mut().enumerate() {
                    series[t] += county.mobility[cat][t] * county.population;
                }
            }
        }
        for series in &mut mobility {
            for v in series {
                *v /= population;
            }
        }
        let smoothed_cases = smooth7(&new_cases);
        let smoothed_deaths = smooth7(&new_deaths);
        let name = geo::state_name_of_postal(&postal).unwrap_or(&postal).to_string();
        states.push(LocationSeries {
            location: postal.clone(),
            level: Level::State,
            name,
            state: postal,
            population,
            new_cases,
            new_deaths,
            smoothed_cases,
            smoothed_deaths,
            mobility,
        });
    }
    states
}
