//! Wide-format JHU CSSE time-series CSV parsing (confirmed cases + deaths,
//! with population riding along in the deaths file).

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;

use crate::data::{geo, DailyRecord, Level};
use crate::error::{CourageError, Result};

/// Column headers that are metadata rather than date columns.
const META_COLUMNS: [&str; 12] = [
    "UID",
    "iso2",
    "iso3",
    "code3",
    "FIPS",
    "Admin2",
    "Province_State",
    "Country_Region",
    "Lat",
    "Long_",
    "Combined_Key",
    "Population",
];

/// Cleaned cumulative counts for one mainland county.
#[derive(Debug, Clone, PartialEq)]
pub struct CountyCounts {
    pub fips: u32,
    /// "Admin2, State" display name.
    pub name: String,
    pub cumulative_cases: Vec<u64>,
    pub cumulative_deaths: Vec<u64>,
    pub population: u64,
}

/// Both JHU tables joined on county and date axis.
#[derive(Debug, Clone, PartialEq)]
pub struct JhuTables {
    pub start: NaiveDate,
    pub n_days: usize,
    /// Ascending FIPS order.
    pub counties: Vec<CountyCounts>,
}

#[derive(Debug)]
struct WideTable {
    start: NaiveDate,
    n_days: usize,
    /// fips -> (display name, values, population if present)
    rows: BTreeMap<u32, (String, Vec<u64>, Option<u64>)>,
}

fn parse_wide(path: &Path) -> Result<WideTable> {
    let display = path.display().to_string();
    if !path.exists() {
        return Err(CourageError::MissingInput(display));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
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

    let mut col_of = BTreeMap::new();
    let mut date_cols: Vec<(usize, NaiveDate)> = Vec::new();
    for (idx, header) in headers.iter().enumerate() {
        if META_COLUMNS.contains(&header) {
            col_of.insert(header.to_string(), idx);
        } else {
            let date = NaiveDate::parse_from_str(header, "%m/%d/%y").map_err(|_| {
                CourageError::Format {
                    path: display.clone(),
                    line: Some(1),
                    message: format!("unparseable date header '{header}'"),
                }
            })?;
            date_cols.push((idx, date));
        }
    }
    if date_cols.is_empty() {
        return Err(CourageError::Format {
            path: display,
            line: Some(1),
            message: "no date columns found".into(),
        });
    }
    for pair in date_cols.windows(2) {
        if (pair[1].1 - pair[0].1).num_days() != 1 {
            return Err(CourageError::Format {
                path: display,
                line: Some(1),
                message: format!(
                    "date columns not consecutive around {} / {}",
                    pair[0].1, pair[1].1
                ),
            });
        }
    }

    let fips_col = *col_of.get("FIPS").ok_or_else(|| CourageError::Format {
        path: display.clone(),
        line: Some(1),
        message: "missing FIPS column".into(),
    })?;
    let state_col = *col_of
        .get("Province_State")
        .ok_or_else(|| CourageError::Format {
            path: display.clone(),
            line: Some(1),
            message: "missing Province_State column".into(),
        })?;
    let admin2_col = col_of.get("Admin2").copied();
    let population_col = col_of.get("Population").copied();

    let mut rows = BTreeMap::new();
    for (line_no, record) in reader.records().enumerate() {
        let line = Some(line_no as u64 + 2);
        let record = record.map_err(|e| CourageError::Format {
            path: display.clone(),
            line,
            message: e.to_string(),
        })?;

        let state_name = record.get(state_col).unwrap_or("").trim();
        let fips_raw = record.get(fips_col).unwrap_or("").trim();
        if fips_raw.is_empty() {
            log::warn!("{display}:{}: row without FIPS skipped", line_no + 2);
            continue;
        }
        let fips = match fips_raw.parse::<f64>() {
            Ok(v) if v >= 0.0 => v as u32,
            _ => {
                log::warn!("{display}:{}: unparseable FIPS '{fips_raw}' skipped", line_no + 2);
                continue;
            }
        };
        // Mainland counties only: drops Alaska, Hawaii, DC, territories,
        // cruise ships, and the "Out of X"/"Unassigned" pseudo-counties.
        if !(1000..60000).contains(&fips) || geo::state_of_fips(fips).is_none() {
            continue;
        }
        // Belt and braces: a mainland FIPS should come with a mainland name.
        if geo::postal_of_state_name(state_name).is_none() {
            continue;
        }

        let county = admin2_col
            .and_then(|c| record.get(c))
            .unwrap_or("")
            .trim()
            .to_string();
        let name = if county.is_empty() {
            state_name.to_string()
        } else {
            format!("{county}, {state_name}")
        };

        let population = match population_col {
            Some(c) => {
                let raw = record.get(c).unwrap_or("").trim();
                Some(raw.parse::<f64>().unwrap_or(0.0).max(0.0) as u64)
            }
            None => None,
        };

        let mut values = Vec::with_capacity(date_cols.len());
        for (idx, date) in &date_cols {
            let raw = record.get(*idx).unwrap_or("").trim();
            let v = if raw.is_empty() {
                0.0
            } else {
                raw.parse::<f64>().map_err(|_| CourageError::Format {
                    path: display.clone(),
                    line,
                    message: format!("bad count '{raw}' on {date}"),
                })?
            };
            values.push(v.max(0.0) as u64);
        }
        rows.insert(fips, (name, values, population));
    }

    Ok(WideTable {
        start: date_cols[0].1,
        n_days: date_cols.len(),
        rows,
    })
}

/// Parses the confirmed-cases and deaths tables, keeping the mainland
/// counties present in both, with cumulative series cleaned to be
/// non-decreasing.
pub fn parse_jhu_tables(cases_path: &Path, deaths_path: &Path) -> Result<JhuTables> {
    let cases = parse_wide(cases_path)?;
    let deaths = parse_wide(deaths_path)?;
    if cases.start != deaths.start || cases.n_days != deaths.n_days {
        return Err(CourageError::Format {
            path: deaths_path.display().to_string(),
            line: None,
            message: format!(
                "date axis mismatch: cases {} x{} vs deaths {} x{}",
                cases.start, cases.n_days, deaths.start, deaths.n_days
            ),
        });
    }

    let mut counties = Vec::new();
    for (fips, (name, case_values, _)) in &cases.rows {
        let Some((_, death_values, population)) = deaths.rows.get(fips) else {
            log::warn!("county {} missing from deaths file; dropped", geo::fips_key(*fips));
            continue;
        };
        counties.push(CountyCounts {
            fips: *fips,
            name: name.clone(),
            cumulative_cases: super::series::clean_cumulative(case_values),
            cumulative_deaths: super::series::clean_cumulative(death_values),
            population: population.unwrap_or(0),
        });
    }
    Ok(JhuTables {
        start: cases.start,
        n_days: cases.n_days,
        counties,
    })
}

/// Per-county daily record stream from the two JHU files. Mobility fields
/// are `NaN` placeholders until the mobility join runs.
pub fn parse_jhu(cases_path: &Path, deaths_path: &Path) -> Result<Vec<DailyRecord>> {
    let tables = parse_jhu_tables(cases_path, deaths_path)?;
    let mut out = Vec::new();
    for county in &tables.counties {
        for t in 0..tables.n_days {
            out.push(DailyRecord {
                location: geo::fips_key(county.fips),
                level: Level::County,
                date: tables.start + chrono::Days::new(t as u64),
                cumulative_cases: county.cumulative_cases[t],
                cumulative_deaths: county.cumulative_deaths[t],
                mobility: [f64::NAN; 6],
                population: county.population,
            });
        }
    }
    Ok(out)
}
