//! Synthetic dataset generation in the upstream CSV formats, used by the
//! end-to-end tests and the runnable examples. Counties get a trend plus
//! weekly seasonality plus noise, with confirmed cases leading deaths so
//! the model has signal to exploit.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::geo::MAINLAND_STATES;
use crate::error::{CourageError, Result};

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub counties: usize,
    /// Counties are spread round-robin over this many mainland states.
    pub states: usize,
    pub days: usize,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            counties: 50,
            states: 5,
            days: 150,
            start: NaiveDate::from_ymd_opt(2020, 3, 7).unwrap(),
            seed: 0,
        }
    }
}

/// One synthetic county with daily incident series; the CSV writers turn
/// these into cumulative wide-format rows.
#[derive(Debug, Clone)]
pub struct SyntheticCounty {
    pub fips: u32,
    pub admin2: String,
    pub state_name: String,
    pub population: u64,
    pub daily_cases: Vec<u64>,
    pub daily_deaths: Vec<u64>,
    /// Percent-change values; `NaN` cells are written as empty (missing).
    pub mobility: [Vec<f64>; 6],
}

/// Deterministic synthetic counties: per-county base level, linear trend
/// (growing or fading), weekly seasonality, and Gaussian noise, with cases
/// leading deaths by ten days and workplace mobility tracking the trend.
pub fn generate(config: &SyntheticConfig) -> Vec<SyntheticCounty> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let days = config.days;
    let lead = 10usize;

    let mut counties = Vec::with_capacity(config.counties);
    for i in 0..config.counties {
        let (state_fips, _, state_name) = MAINLAND_STATES[i % config.states];
        let fips = state_fips * 1000 + (2 * (i / config.states) + 1) as u32;

        let base = rng.random_range(3.0..12.0);
        // Two thirds of counties trend up, one third fades.
        let growth = if i % 3 == 2 {
            rng.random_range(-0.008..-0.002)
        } else {
            rng.random_range(0.004..0.014)
        };
        let season_amp = base * rng.random_range(0.15..0.35);
        let phase = rng.random_range(0.0..7.0);
        let noise_amp = base * 0.12;

        let intensity = |t: f64| -> f64 {
            let trend = base * (1.0 + growth * t);
            let season = season_amp * (std::f64::consts::TAU * (t + phase) / 7.0).sin();
            (trend + season).max(0.0)
        };

        let mut daily_deaths = Vec::with_capacity(days);
        let mut daily_cases = Vec::with_capacity(days);
        for t in 0..days {
            let d = intensity(t as f64) + noise_amp * noise.sample(&mut rng);
            daily_deaths.push(d.round().max(0.0) as u64);
            // Cases foreshadow deaths `lead` days out, with their own noise.
            let c = 20.0 * intensity((t + lead) as f64) + 4.0 * noise_amp * noise.sample(&mut rng);
            daily_cases.push(c.round().max(0.0) as u64);
        }

        let mut mobility: [Vec<f64>; 6] = std::array::from_fn(|_| Vec::with_capacity(days));
        for t in 0..days {
            let tf = t as f64;
            let weekly = (std::f64::consts::TAU * tf / 7.0).sin();
            for (cat, series) in mobility.iter_mut().enumerate() {
                let level = match cat {
                    4 => -40.0 + 800.0 * growth * tf / days as f64, // workplaces track trend
                    5 => 10.0 - 200.0 * growth * tf / days as f64,  // residential mirrors it
                    _ => -10.0 - 2.0 * cat as f64,
                };
                let v = level + 6.0 * weekly + 1.5 * noise.sample(&mut rng);
                // Sparse gaps so imputation paths are exercised.
                if rng.random_range(0.0..1.0) < 0.02 {
                    series.push(f64::NAN);
                } else {
                    series.push(v.round());
                }
            }
        }

        counties.push(SyntheticCounty {
            fips,
            admin2: format!("County{:02}", i + 1),
            state_name: state_name.to_string(),
            population: rng.random_range(20_000..500_000),
            daily_cases,
            daily_deaths,
            mobility,
        });
    }
    counties.sort_by_key(|c| c.fips);
    counties
}

pub struct SyntheticPaths {
    pub cases: PathBuf,
    pub deaths: PathBuf,
    pub mobility: PathBuf,
}

/// Writes the three input CSVs (JHU-style confirmed + deaths, Google-style
/// mobility) for the given counties.
pub fn write_dataset_csvs(
    counties: &[SyntheticCounty],
    start: NaiveDate,
    dir: &Path,
) -> Result<SyntheticPaths> {
    let paths = SyntheticPaths {
        cases: dir.join("time_series_covid19_confirmed_US.csv"),
        deaths: dir.join("time_series_covid19_deaths_US.csv"),
        mobility: dir.join("Global_Mobility_Report.csv"),
    };
    write_jhu_csv(counties, start, &paths.cases, false)?;
    write_jhu_csv(counties, start, &paths.deaths, true)?;
    write_mobility_csv(counties, start, &paths.mobility)?;
    Ok(paths)
}

fn csv_io(path: &Path, e: csv::Error) -> CourageError {
    CourageError::io(path.display().to_string(), std::io::Error::other(e))
}

pub fn write_jhu_csv(
    counties: &[SyntheticCounty],
    start: NaiveDate,
    path: &Path,
    deaths: bool,
) -> Result<()> {
    let days = counties.first().map_or(0, |c| c.daily_deaths.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;

    let mut header: Vec<String> = [
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
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if deaths {
        header.push("Population".into());
    }
    for t in 0..days {
        let date = start + chrono::Days::new(t as u64);
        header.push(date.format("%-m/%-d/%y").to_string());
    }
    w.write_record(&header).map_err(|e| csv_io(path, e))?;

    for county in counties {
        let mut record: Vec<String> = vec![
            format!("840{:05}", county.fips),
            "US".into(),
            "USA".into(),
            "840".into(),
            format!("{}.0", county.fips),
            county.admin2.clone(),
            county.state_name.clone(),
            "US".into(),
            "0.0".into(),
            "0.0".into(),
            format!("{}, {}, US", county.admin2, county.state_name),
        ];
        if deaths {
            record.push(county.population.to_string());
        }
        let daily = if deaths {
            &county.daily_deaths
        } else {
            &county.daily_cases
        };
        let mut cumulative = 0u64;
        for &v in daily {
            cumulative += v;
            record.push(cumulative.to_string());
        }
        w.write_record(&record).map_err(|e| csv_io(path, e))?;
    }
    w.flush()
        .map_err(|e| CourageError::io(path.display().to_string(), e))
}

pub fn write_mobility_csv(
    counties: &[SyntheticCounty],
    start: NaiveDate,
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record([
        "country_region_code",
        "country_region",
        "sub_region_1",
        "sub_region_2",
        "metro_area",
        "iso_3166_2_code",
        "census_fips_code",
        "place_id",
        "date",
        "retail_and_recreation_percent_change_from_baseline",
        "grocery_and_pharmacy_percent_change_from_baseline",
        "parks_percent_change_from_baseline",
        "transit_stations_percent_change_from_baseline",
        "workplaces_percent_change_from_baseline",
        "residential_percent_change_from_baseline",
    ])
    .map_err(|e| csv_io(path, e))?;

    for county in counties {
        let days = county.mobility[0].len();
        for t in 0..days {
            let date = start + chrono::Days::new(t as u64);
            let mut record: Vec<String> = vec![
                "US".into(),
                "United States".into(),
                county.state_name.clone(),
                format!("{} County", county.admin2),
                String::new(),
                String::new(),
                format!("{:05}", county.fips),
                format!("ChIJ{}", county.fips),
                date.format("%Y-%m-%d").to_string(),
            ];
            for cat in 0..6 {
                let v = county.mobility[cat][t];
                record.push(if v.is_nan() {
                    String::new()
                } else {
                    format!("{v}")
                });
            }
            w.write_record(&record).map_err(|e| csv_io(path, e))?;
        }
    }
    w.flush()
        .map_err(|e| CourageError::io(path.display().to_string(), e))
}
