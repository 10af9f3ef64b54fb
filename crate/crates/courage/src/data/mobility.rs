//! Google community-mobility report parsing (long format, US county rows).

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;

use crate::data::geo;
use crate::error::{CourageError, Result};

/// One county-day of percent-change-from-baseline values; missing cells are
/// `NaN` and get imputed later.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityRecord {
    pub fips: u32,
    pub date: NaiveDate,
    /// retail/recreation, grocery/pharmacy, parks, transit, workplaces,
    /// residential.
    pub values: [f64; 6],
}

/// Maps (state name lower, county name lower) to FIPS, built from the JHU
/// tables so that mobility rows lacking a `census_fips_code` can still be
/// joined by name.
pub type NameIndex = BTreeMap<(String, String), u32>;

pub fn name_index(counties: &[super::jhu::CountyCounts]) -> NameIndex {
    let mut index = NameIndex::new();
    for county in counties {
        if let Some((admin2, state)) = county.name.split_once(", ") {
            index.insert(
                (state.to_lowercase(), admin2.to_lowercase()),
                county.fips,
            );
        }
    }
    index
}

const VALUE_COLUMNS: [&str; 6] = [
    "retail_and_recreation_percent_change_from_baseline",
    "grocery_and_pharmacy_percent_change_from_baseline",
    "parks_percent_change_from_baseline",
    "transit_stations_percent_change_from_baseline",
    "workplaces_percent_change_from_baseline",
    "residential_percent_change_from_baseline",
];

/// Strips the suffixes Google appends to county names before a name join.
fn normalize_county(name: &str) -> String {
    let lower = name.trim().to_lowercase();
    for suffix in [" county", " parish", " borough", " municipality"] {
        if let Some(stripped) = lower.strip_suffix(suffix) {
            return stripped.to_string();
        }
    }
    lower
}

/// Parses US county rows, joining to FIPS via `census_fips_code` when
/// present and the name index otherwise. Duplicate (county, date) rows keep
/// the last occurrence; unmatched county names are logged and dropped.
pub fn parse_mobility(path: &Path, names: &NameIndex) -> Result<Vec<MobilityRecord>> {
    let display = path.display().to_string();
    if !path.exists() {
        return Err(CourageError::MissingInput(display));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| CourageError::Format {
            path: display.clone(),
            line: None,
            message: e.to_string(),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| CourageError::Format {
            path: display.clone(),
            line: Some(1),
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let country_col = col("country_region_code");
    let state_col = col("sub_region_1").ok_or_else(|| CourageError::Format {
        path: display.clone(),
        line: Some(1),
        message: "missing sub_region_1 column".into(),
    })?;
    let county_col = col("sub_region_2").ok_or_else(|| CourageError::Format {
        path: display.clone(),
        line: Some(1),
        message: "missing sub_region_2 column".into(),
    })?;
    let metro_col = col("metro_area");
    let fips_col = col("census_fips_code");
    let date_col = col("date").ok_or_else(|| CourageError::Format {
        path: display.clone(),
        line: Some(1),
        message: "missing date column".into(),
    })?;
    let mut value_cols = [0usize; 6];
    for (i, name) in VALUE_COLUMNS.iter().enumerate() {
        value_cols[i] = col(name).ok_or_else(|| CourageError::Format {
            path: display.clone(),
            line: Some(1),
            message: format!("missing column {name}"),
        })?;
    }

    let mut by_key: BTreeMap<(u32, NaiveDate), [f64; 6]> = BTreeMap::new();
    for (line_no, record) in reader.records().enumerate() {
        let line = line_no as u64 + 2;
        let record = record.map_err(|e| CourageError::Format {
            path: display.clone(),
            line: Some(line),
            message: e.to_string(),
        })?;
        let field = |idx: usize| record.get(idx).unwrap_or("").trim();

        if let Some(c) = country_col {
            if field(c) != "US" {
                continue;
            }
        }
        if let Some(m) = metro_col {
            if !field(m).is_empty() {
                continue;
            }
        }
        let state_name = field(state_col);
        let county_name = field(county_col);
        // National and state-level rows are out of scope: state mobility is
        // recomputed as a population-weighted county mean.
        if state_name.is_empty() || county_name.is_empty() {
            continue;
        }

        let fips = match fips_col.map(field).filter(|s| !s.is_empty()) {
            Some(raw) => match raw.parse::<f64>() {
                Ok(v) => v as u32,
                Err(_) => {
                    log::warn!("{display}:{line}: bad census_fips_code '{raw}'; dropped");
                    continue;
                }
            },
            None => {
                let key = (state_name.to_lowercase(), normalize_county(county_name));
                match names.get(&key) {
                    Some(&f) => f,
                    None => {
                        log::warn!(
                            "{display}:{line}: unmatched region '{county_name}, {state_name}'; dropped"
                        );
                        continue;
                    }
                }
            }
        };
        if geo::state_of_fips(fips).is_none() {
            continue;
        }

        let date = NaiveDate::parse_from_str(field(date_col), "%Y-%m-%d").map_err(|_| {
            CourageError::Format {
                path: display.clone(),
                line: Some(line),
                message: format!("bad date '{}'", field(date_col)),
            }
        })?;

        let mut values = [f64::NAN; 6];
        for (i, &c) in value_cols.iter().enumerate() {
            let raw = field(c);
            if !raw.is_empty() {
                values[i] = raw.parse::<f64>().map_err(|_| CourageError::Format {
                    path: display.clone(),
                    line: Some(line),
                    message: format!("bad mobility value '{raw}'"),
                })?;
            }
        }

        if by_key.insert((fips, date), values).is_some() {
            log::warn!(
                "{display}:{line}: duplicate mobility row for {} {date}; last wins",
                geo::fips_key(fips)
            );
        }
    }

    Ok(by_key
        .into_iter()
        .map(|((fips, date), values)| MobilityRecord { fips, date, values })
        .collect())
}
