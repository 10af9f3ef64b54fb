//! Data ingestion: raw CSVs to standardized feature windows with
//! weekly-total death targets and leakage-free train/test splits.

pub mod cache;
pub mod geo;
pub mod jhu;
pub mod mobility;
pub mod series;
pub mod standardize;
pub mod windows;

pub use series::{cumulative_to_new, smooth7, Dataset, LocationSeries};
pub use standardize::{StandardizedSample, StandardizedSet, Standardizer};
pub use windows::{build_windows, eval_anchors, split, split_cutoff, SplitOutcome};

use chrono::NaiveDate;

use crate::numerics::Matrix;

/// Number of feature rows per day: new cases, new deaths, smoothed cases,
/// smoothed deaths, the six mobility deltas, and log10 population as a
/// constant row.
pub const FEATURE_DIM: usize = 11;

pub const ROW_NEW_CASES: usize = 0;
pub const ROW_NEW_DEATHS: usize = 1;
pub const ROW_SMOOTHED_CASES: usize = 2;
pub const ROW_SMOOTHED_DEATHS: usize = 3;
pub const ROW_MOBILITY_FIRST: usize = 4;
pub const ROW_LOG_POPULATION: usize = 10;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "new_cases",
    "new_deaths",
    "smoothed_cases",
    "smoothed_deaths",
    "mobility_retail_recreation",
    "mobility_grocery_pharmacy",
    "mobility_parks",
    "mobility_transit",
    "mobility_workplaces",
    "mobility_residential",
    "log10_population",
];

pub const MOBILITY_CATEGORIES: [&str; 6] = [
    "retail_and_recreation",
    "grocery_and_pharmacy",
    "parks",
    "transit_stations",
    "workplaces",
    "residential",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    County,
    State,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::County => "county",
            Level::State => "state",
        }
    }
}

/// One location-day of raw observations. Mobility values are `NaN` until
/// the mobility join and imputation have run; everything downstream of
/// [`series::build_dataset`] sees only finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyRecord {
    /// Five-digit FIPS for counties, postal code for states.
    pub location: String,
    pub level: Level,
    pub date: NaiveDate,
    /// Cleaned (non-decreasing) cumulative counts.
    pub cumulative_cases: u64,
    pub cumulative_deaths: u64,
    /// Percent change from baseline for the six mobility categories.
    pub mobility: [f64; 6],
    pub population: u64,
}

/// One training/evaluation sample: `FEATURE_DIM x L` days of features ending
/// at `anchor`, plus the two weekly-total death targets that follow.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub location: String,
    pub level: Level,
    /// Postal code of the state the location belongs to.
    pub state: String,
    /// Last day of the input window (week 0).
    pub anchor: NaiveDate,
    pub features: Matrix,
    /// Sum of smoothed daily deaths over anchor+1 ..= anchor+7.
    pub target_week1: f64,
    /// Sum of smoothed daily deaths over anchor+8 ..= anchor+14.
    pub target_week2: f64,
}
