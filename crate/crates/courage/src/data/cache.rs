//! Versioned binary cache of an ingested dataset, so train/predict runs can
//! skip CSV parsing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::binio::*;
use crate::data::{Dataset, Level, LocationSeries, FEATURE_DIM};
use crate::error::{CourageError, Result};

const MAGIC: &[u8; 4] = b"CRGW";
const VERSION: u32 = 1;

pub fn write_cache(dataset: &Dataset, path: &Path) -> Result<()> {
    let label = path.display().to_string();
    let file = wrap_io(&label, File::create(path))?;
    let mut w = BufWriter::new(file);
    wrap_io(&label, write_all(&mut w, dataset))?;
    wrap_io(&label, w.flush())
}

fn write_all(w: &mut impl Write, dataset: &Dataset) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    write_i64(
        w,
        dataset
            .start
            .signed_duration_since(NaiveDate::from_ymd_opt(1970, 1, 1).unwrap())
            .num_days(),
    )?;
    write_u32(w, dataset.n_days as u32)?;
    write_u32(w, FEATURE_DIM as u32)?;
    write_u32(w, dataset.counties.len() as u32)?;
    write_u32(w, dataset.states.len() as u32)?;
    for series in dataset.counties.iter().chain(&dataset.states) {
        write_series(w, series)?;
    }
    Ok(())
}

fn write_series(w: &mut impl Write, series: &LocationSeries) -> std::io::Result<()> {
    write_u8(w, matches!(series.level, Level::State) as u8)?;
    write_str(w, &series.location)?;
    write_str(w, &series.name)?;
    write_str(w, &series.state)?;
    write_f64(w, series.population)?;
    write_f64_slice(w, &series.new_cases)?;
    write_f64_slice(w, &series.new_deaths)?;
    write_f64_slice(w, &series.smoothed_cases)?;
    write_f64_slice(w, &series.smoothed_deaths)?;
    for cat in 0..6 {
        write_f64_slice(w, &series.mobility[cat])?;
    }
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<Dataset> {
    let label = path.display().to_string();
    if !path.exists() {
        return Err(CourageError::MissingInput(label));
    }
    let file = wrap_io(&label, File::open(path))?;
    let mut r = BufReader::new(file);
    wrap_io(&label, read_all(&mut r))
}

fn read_all(r: &mut impl Read) -> std::io::Result<Dataset> {
    expect_magic(r, MAGIC, "dataset cache")?;
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unsupported cache version {version}"),
        ));
    }
    let epoch_days = read_i64(r)?;
    let start = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap() + chrono::Days::new(epoch_days as u64);
    let n_days = read_u32(r)? as usize;
    let k = read_u32(r)? as usize;
    if k != FEATURE_DIM {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("cache built with {k} feature rows, expected {FEATURE_DIM}"),
        ));
    }
    let n_counties = read_u32(r)? as usize;
    let n_states = read_u32(r)? as usize;
    let mut counties = Vec::with_capacity(n_counties);
    let mut states = Vec::with_capacity(n_states);
    for _ in 0..n_counties + n_states {
        let series = read_series(r, n_days)?;
        match series.level {
            Level::County => counties.push(series),
            Level::State => states.push(series),
        }
    }
    Ok(Dataset {
        start,
        n_days,
        counties,
        states,
    })
}

fn read_series(r: &mut impl Read, n_days: usize) -> std::io::Result<LocationSeries> {
    let level = if read_u8(r)? == 1 {
        Level::State
    } else {
        Level::County
    };
    let location = read_str(r)?;
    let name = read_str(r)?;
    let state = read_str(r)?;
    let population = read_f64(r)?;
    let new_cases = read_f64_vec(r, n_days)?;
    let new_deaths = read_f64_vec(r, n_days)?;
    let smoothed_cases = read_f64_vec(r, n_days)?;
    let smoothed_deaths = read_f64_vec(r, n_days)?;
    let mut mobility: [Vec<f64>; 6] = std::array::from_fn(|_| Vec::new());
    for cat in &mut mobility {
        *cat = read_f64_vec(r, n_days)?;
    }
    Ok(LocationSeries {
        location,
        level,
        name,
        state,
        population,
        new_cases,
        new_deaths,
        smoothed_cases,
        smoothed_deaths,
        mobility,
    })
}
