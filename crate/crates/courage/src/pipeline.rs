//! End-to-end commands behind the CLI: ingest CSVs into the binary cache,
//! train checkpoints, emit forecast CSVs, and score them into reports.
//! Every command writes a manifest with input hashes and its effective
//! configuration, enough to re-run it bit-identically.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::augment::MixupConfig;
use crate::checkpoint::Checkpoint;
use crate::data::{
    cache, jhu, mobility, series, windows, Dataset, Level, SampleWindow, Standardizer,
    FEATURE_DIM,
};
use crate::error::{CourageError, Result};
use crate::forecast::{
    self, aggregate_to_state, ensemble_average, naive_forecast, predict, truth_table, EvalReport,
    ForecastSet, TruthKind, MODEL_COUNTY, MODEL_ENSEMBLE, MODEL_MIXUP, MODEL_NAIVE, MODEL_STATE,
};
use crate::model::{ModelConfig, Pooling};
use crate::train::{train, TrainConfig};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CourageError::io(path.display().to_string(), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
struct FileStamp {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    config: BTreeMap<String, String>,
    inputs: Vec<FileStamp>,
    outputs: Vec<FileStamp>,
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: BTreeMap<String, String>,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<PathBuf> {
    let stamp = |paths: &[&Path]| -> Result<Vec<FileStamp>> {
        paths
            .iter()
            .map(|p| {
                Ok(FileStamp {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect()
    };
    let manifest = Manifest {
        tool: "courage",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        config,
        inputs: stamp(inputs)?,
        outputs: stamp(outputs)?,
    };
    let path = out_dir.join(format!("{command}_manifest.json"));
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CourageError::io(path.display().to_string(), std::io::Error::other(e)))?;
    fs::write(&path, json).map_err(|e| CourageError::io(path.display().to_string(), e))?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CourageError::io(dir.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// ingest

#[derive(Debug, Clone)]
pub struct IngestArgs {
    pub cases: PathBuf,
    pub deaths: PathBuf,
    pub mobility: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug)]
pub struct IngestSummary {
    pub cache_path: PathBuf,
    pub manifest_path: PathBuf,
    pub counties: usize,
    pub states: usize,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    pub cache_sha256: String,
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<IngestSummary> {
    for path in [&args.cases, &args.deaths, &args.mobility] {
        if !path.exists() {
            return Err(CourageError::MissingInput(path.display().to_string()));
        }
    }
    ensure_dir(&args.out_dir)?;

    let tables = jhu::parse_jhu_tables(&args.cases, &args.deaths)?;
    let names = mobility::name_index(&tables.counties);
    let mobility_records = mobility::parse_mobility(&args.mobility, &names)?;
    let dataset = series::build_dataset(tables.start, tables.n_days, tables.counties, &mobility_records)?;

    let cache_path = args.out_dir.join("windows_cache.bin");
    cache::write_cache(&dataset, &cache_path)?;
    let cache_sha256 = sha256_file(&cache_path)?;

    let mut config = BTreeMap::new();
    config.insert("feature_dim".into(), FEATURE_DIM.to_string());
    config.insert("first_date".into(), dataset.first_date().to_string());
    config.insert("last_date".into(), dataset.last_date().to_string());
    let manifest_path = write_manifest(
        &args.out_dir,
        "ingest",
        config,
        &[&args.cases, &args.deaths, &args.mobility],
        &[&cache_path],
    )?;

    Ok(IngestSummary {
        cache_path,
        manifest_path,
        counties: dataset.counties.len(),
        states: dataset.states.len(),
        first_date: dataset.first_date(),
        last_date: dataset.last_date(),
        cache_sha256,
    })
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainLevel {
    /// County and state windows together (the default).
    Both,
    CountyOnly,
    StateOnly,
}

impl std::str::FromStr for TrainLevel {
    type Err = CourageError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(TrainLevel::Both),
            "county" => Ok(TrainLevel::CountyOnly),
            "state" => Ok(TrainLevel::StateOnly),
            other => Err(CourageError::config(format!(
                "unknown train level '{other}' (expected both|county|state)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub cache: PathBuf,
    pub out_dir: PathBuf,
    /// Fraction of the date span that belongs to the train period.
    pub split: f64,
    pub mixup: MixupConfig,
    /// Overrides the County/Mixup/State naming rule when set.
    pub label: Option<String>,
    pub train_level: TrainLevel,
    pub window_len: usize,
    pub stride: usize,
    pub pooling: Pooling,
    pub residual_layernorm: bool,
    pub train: TrainConfig,
}

impl TrainArgs {
    pub fn new(cache: PathBuf, out_dir: PathBuf) -> Self {
        TrainArgs {
            cache,
            out_dir,
            split: 0.8,
            mixup: MixupConfig::default(),
            label: None,
            train_level: TrainLevel::Both,
            window_len: 7,
            stride: 1,
            pooling: Pooling::LastRow,
            residual_layernorm: true,
            train: TrainConfig::default(),
        }
    }

    fn effective_label(&self) -> String {
        if let Some(label) = &self.label {
            return label.clone();
        }
        match (self.train_level, self.mixup.enabled) {
            (TrainLevel::StateOnly, _) => MODEL_STATE.to_string(),
            (_, true) => MODEL_MIXUP.to_string(),
            (_, false) => MODEL_COUNTY.to_string(),
        }
    }
}

#[derive(Debug)]
pub struct TrainSummary {
    pub label: String,
    pub checkpoint_path: PathBuf,
    pub loss_csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub cutoff: NaiveDate,
    pub train_windows: usize,
    pub final_loss: Option<f64>,
    /// Populated when training aborted on a non-finite loss/gradient.
    pub abort: Option<String>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    ensure_dir(&args.out_dir)?;
    let dataset = cache::read_cache(&args.cache)?;

    let mut pool: Vec<SampleWindow> = Vec::new();
    if matches!(args.train_level, TrainLevel::Both | TrainLevel::CountyOnly) {
        pool.extend(windows::all_windows(&dataset, Level::County, args.window_len, args.stride));
    }
    if matches!(args.train_level, TrainLevel::Both | TrainLevel::StateOnly) {
        pool.extend(windows::all_windows(&dataset, Level::State, args.window_len, args.stride));
    }

    let outcome = windows::split(pool, args.split, dataset.first_date(), dataset.last_date())?;
    windows::assert_no_leakage(&outcome)?;
    if outcome.train.is_empty() {
        return Err(CourageError::contract(
            "no training windows inside the train period",
        ));
    }

    let standardizer = Standardizer::fit(&outcome.train)?;
    let train_set = standardizer.apply_all(&outcome.train);

    let model_config = ModelConfig {
        feature_dim: FEATURE_DIM,
        window_len: args.window_len,
        pooling: args.pooling,
        residual_layernorm: args.residual_layernorm,
        ..ModelConfig::default_for(FEATURE_DIM)
    };

    let output = train(&train_set.samples, &model_config, &args.train, &args.mixup)?;

    let label = args.effective_label();
    let checkpoint = Checkpoint {
        label: label.clone(),
        config: model_config,
        params: output.params,
        standardizer,
    };
    let checkpoint_path = args.out_dir.join(format!("{}.ckpt", label.to_lowercase()));
    checkpoint.save(&checkpoint_path)?;

    let loss_csv_path = args.out_dir.join(format!("{}_loss.csv", label.to_lowercase()));
    write_loss_curve(&output.curve, &loss_csv_path)?;

    let mut config = BTreeMap::new();
    config.insert("label".into(), label.clone());
    config.insert("split".into(), args.split.to_string());
    config.insert("cutoff".into(), outcome.cutoff.to_string());
    config.insert("mixup".into(), args.mixup.enabled.to_string());
    config.insert("mixup_alpha".into(), args.mixup.alpha.to_string());
    config.insert("train_level".into(), format!("{:?}", args.train_level));
    config.insert("window_len".into(), args.window_len.to_string());
    config.insert("stride".into(), args.stride.to_string());
    config.insert("pooling".into(), args.pooling.to_string());
    config.insert(
        "residual_layernorm".into(),
        args.residual_layernorm.to_string(),
    );
    config.insert("epochs".into(), args.train.epochs.to_string());
    config.insert("initial_lr".into(), args.train.initial_lr.to_string());
    config.insert(
        "lr_halving_period".into(),
        args.train.lr_halving_period.to_string(),
    );
    config.insert("huber_delta".into(), args.train.huber_delta.to_string());
    config.insert("batch_size".into(), args.train.batch_size.to_string());
    config.insert("seed".into(), args.train.seed.to_string());
    config.insert(
        "grad_clip".into(),
        args.train
            .grad_clip
            .map(|v| v.to_string())
            .unwrap_or_else(|| "off".into()),
    );
    config.insert("train_windows".into(), outcome.train.len().to_string());
    let manifest_path = write_manifest(
        &args.out_dir,
        "train",
        config,
        &[&args.cache],
        &[&checkpoint_path, &loss_csv_path],
    )?;

    Ok(TrainSummary {
        label,
        checkpoint_path,
        loss_csv_path,
        manifest_path,
        cutoff: outcome.cutoff,
        train_windows: outcome.train.len(),
        final_loss: output.curve.last().map(|s| s.train_loss),
        abort: output.abort,
    })
}

fn write_loss_curve(curve: &[crate::train::EpochStat], path: &Path) -> Result<()> {
    let label = path.display().to_string();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CourageError::io(&label, std::io::Error::other(e)))?;
    let io_err = |e: csv::Error| CourageError::io(&label, std::io::Error::other(e));
    w.write_record(["epoch", "lr", "train_loss"]).map_err(io_err)?;
    for stat in curve {
        w.write_record([
            stat.epoch.to_string(),
            format!("{}", stat.lr),
            format!("{}", stat.train_loss),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| CourageError::io(&label, e))
}

// ---------------------------------------------------------------------------
// predict

#[derive(Debug, Clone)]
pub struct PredictArgs {
    pub cache: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub split: f64,
    /// Days between evaluation anchors (7 = weekly reporting grid).
    pub eval_stride: usize,
}

#[derive(Debug)]
pub struct PredictSummary {
    pub cutoff: NaiveDate,
    pub anchors: Vec<NaiveDate>,
    pub forecast_files: Vec<PathBuf>,
    pub manifest_path: PathBuf,
}

pub fn cmd_predict(args: &PredictArgs) -> Result<PredictSummary> {
    ensure_dir(&args.out_dir)?;
    let dataset = cache::read_cache(&args.cache)?;
    let cutoff = windows::split_cutoff(args.split, dataset.first_date(), dataset.last_date())?;
    let anchors = windows::eval_anchors(cutoff, dataset.last_date(), args.eval_stride);
    if anchors.is_empty() {
        return Err(CourageError::contract(
            "test period too short for any evaluation anchor",
        ));
    }

    let county_names: BTreeMap<String, String> = dataset
        .counties
        .iter()
        .chain(&dataset.states)
        .map(|s| (s.location.clone(), s.name.clone()))
        .collect();

    let mut files = Vec::new();
    let mut write = |set: &ForecastSet, level: &str| -> Result<()> {
        let path = args
            .out_dir
            .join(format!("{}_{level}.csv", set.model.replace(' ', "_")));
        forecast::write_forecast_csv(set, &path)?;
        files.push(path);
        Ok(())
    };

    // The persistence baseline needs no checkpoint.
    let naive_county = naive_forecast(&dataset, Level::County, &anchors);
    let naive_state = naive_forecast(&dataset, Level::State, &anchors);
    write(&naive_county, "county")?;
    write(&naive_state, "state")?;

    let mut county_sets: BTreeMap<String, ForecastSet> = BTreeMap::new();
    for ckpt_path in &args.checkpoints {
        let checkpoint = Checkpoint::load(ckpt_path)?;
        let window_len = checkpoint.config.window_len;
        if checkpoint.label == MODEL_STATE {
            // The State baseline predicts states directly from state inputs.
            let state_windows: Vec<SampleWindow> = dataset
                .states
                .iter()
                .flat_map(|s| windows::build_windows_at(s, dataset.start, window_len, &anchors))
                .collect();
            let set = predict(
                &checkpoint,
                &checkpoint.standardizer.apply_all(&state_windows),
                &county_names,
            )?;
            write(&set, "state")?;
        } else {
            let county_windows: Vec<SampleWindow> = dataset
                .counties
                .iter()
                .flat_map(|s| windows::build_windows_at(s, dataset.start, window_len, &anchors))
                .collect();
            let set = predict(
                &checkpoint,
                &checkpoint.standardizer.apply_all(&county_windows),
                &county_names,
            )?;
            write(&set, "county")?;
            write(&aggregate_to_state(&set)?, "state")?;
            county_sets.insert(checkpoint.label.clone(), set);
        }
    }

    if let (Some(county), Some(mixup)) =
        (county_sets.get(MODEL_COUNTY), county_sets.get(MODEL_MIXUP))
    {
        let courage = ensemble_average(county, mixup, MODEL_ENSEMBLE)?;
        write(&courage, "county")?;
        write(&aggregate_to_state(&courage)?, "state")?;
    }

    let mut config = BTreeMap::new();
    config.insert("split".into(), args.split.to_string());
    config.insert("cutoff".into(), cutoff.to_string());
    config.insert("eval_stride".into(), args.eval_stride.to_string());
    config.insert("anchors".into(), anchors.len().to_string());
    let inputs: Vec<&Path> = std::iter::once(args.cache.as_path())
        .chain(args.checkpoints.iter().map(|p| p.as_path()))
        .collect();
    let outputs: Vec<&Path> = files.iter().map(|p| p.as_path()).collect();
    let manifest_path = write_manifest(&args.out_dir, "predict", config, &inputs, &outputs)?;

    Ok(PredictSummary {
        cutoff,
        anchors,
        forecast_files: files,
        manifest_path,
    })
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub cache: PathBuf,
    pub forecasts: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub truth: TruthKind,
    /// `None` uses the five default backtest periods.
    pub periods: Option<Vec<(NaiveDate, NaiveDate)>>,
    /// Free-form label recorded in the report's split column.
    pub split_label: String,
}

#[derive(Debug)]
pub struct EvaluateSummary {
    pub report_path: PathBuf,
    pub plot_paths: Vec<PathBuf>,
    pub manifest_path: PathBuf,
    pub report: EvalReport,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvaluateSummary> {
    ensure_dir(&args.out_dir)?;
    let dataset = cache::read_cache(&args.cache)?;

    let mut sets: Vec<ForecastSet> = Vec::new();
    for path in &args.forecasts {
        sets.extend(forecast::read_forecast_csv(path)?);
    }
    // The same model may arrive split across files (county + state CSVs).
    let mut merged: BTreeMap<String, Vec<forecast::ForecastEntry>> = BTreeMap::new();
    for set in sets {
        merged.entry(set.model.clone()).or_default().extend(set.entries);
    }
    let sets: Vec<ForecastSet> = merged
        .into_iter()
        .map(|(model, entries)| ForecastSet::new(model, entries))
        .collect();
    if sets.is_empty() {
        return Err(CourageError::contract("no forecasts to evaluate"));
    }

    let anchors: Vec<NaiveDate> = sets
        .iter()
        .flat_map(|s| s.anchors())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut truth = truth_table(&dataset, Level::County, &anchors, args.truth);
    truth.extend(truth_table(&dataset, Level::State, &anchors, args.truth));

    let periods = args.periods.clone().unwrap_or_else(forecast::default_periods);
    let report = forecast::evaluate_periods(&sets, &truth, &periods)?;

    let report_path = args.out_dir.join("report.csv");
    forecast::write_report_csv(&report, &args.split_label, &report_path)?;

    let plot_paths = write_plot_data(&args.out_dir, &dataset, &sets, &truth)?;

    let mut config = BTreeMap::new();
    config.insert("truth".into(), format!("{:?}", args.truth).to_lowercase());
    config.insert("split".into(), args.split_label.clone());
    config.insert(
        "periods".into(),
        periods
            .iter()
            .map(|(s, e)| format!("{s}:{e}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    let inputs: Vec<&Path> = std::iter::once(args.cache.as_path())
        .chain(args.forecasts.iter().map(|p| p.as_path()))
        .collect();
    let mut outputs: Vec<&Path> = vec![&report_path];
    outputs.extend(plot_paths.iter().map(|p| p.as_path()));
    let manifest_path = write_manifest(&args.out_dir, "evaluate", config, &inputs, &outputs)?;

    Ok(EvaluateSummary {
        report_path,
        plot_paths,
        manifest_path,
        report,
    })
}

/// Per-state curves: observed weekly totals next to each model's prediction,
/// one row per (anchor, horizon).
fn write_plot_data(
    out_dir: &Path,
    dataset: &Dataset,
    sets: &[ForecastSet],
    truth: &forecast::TruthTable,
) -> Result<Vec<PathBuf>> {
    let model_order = [MODEL_NAIVE, MODEL_COUNTY, MODEL_MIXUP, MODEL_ENSEMBLE];
    let mut paths = Vec::new();
    for state in &dataset.states {
        let postal = &state.location;
        let mut anchors: std::collections::BTreeSet<NaiveDate> = Default::default();
        for set in sets {
            for e in set.entries.iter().filter(|e| &e.location == postal) {
                anchors.insert(e.anchor);
            }
        }
        if anchors.is_empty() {
            continue;
        }

        let path = out_dir.join(format!("plot_{postal}.csv"));
        let label = path.display().to_string();
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| CourageError::io(&label, std::io::Error::other(e)))?;
        let io_err = |e: csv::Error| CourageError::io(&label, std::io::Error::other(e));
        w.write_record(["date", "horizon", "target", "naive", "county", "mixup", "courage"])
            .map_err(io_err)?;
        for anchor in anchors {
            for horizon in [1usize, 2usize] {
                let mut record = vec![
                    anchor.to_string(),
                    format!("week{horizon}"),
                    truth
                        .get(postal, anchor)
                        .map(|t| {
                            let v = if horizon == 1 { t.0 } else { t.1 };
                            format!("{v}")
                        })
                        .unwrap_or_default(),
                ];
                for model in model_order {
                    let value = sets
                        .iter()
                        .find(|s| s.model == model)
                        .and_then(|s| {
                            s.entries
                                .iter()
                                .find(|e| &e.location == postal && e.anchor == anchor)
                        })
                        .map(|e| {
                            let v = if horizon == 1 { e.week1 } else { e.week2 };
                            format!("{v}")
                        })
                        .unwrap_or_default();
                    record.push(value);
                }
                w.write_record(&record).map_err(io_err)?;
            }
        }
        w.flush().map_err(|e| CourageError::io(&label, e))?;
        paths.push(path);
    }
    Ok(paths)
}

// ---------------------------------------------------------------------------
// config file

/// Plain-text `key = value` run configuration; `#` starts a comment. Flags
/// given on the command line win over file values.
pub fn load_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .map_err(|_| CourageError::MissingInput(path.display().to_string()))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CourageError::Format {
                path: path.display().to_string(),
                line: Some(i as u64 + 1),
                message: format!("expected 'key = value', got '{raw}'"),
            });
        };
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// Parses a `--periods` argument: comma-separated `start:end` date pairs.
pub fn parse_periods(spec: &str) -> Result<Vec<(NaiveDate, NaiveDate)>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let Some((start, end)) = part.split_once(':') else {
            return Err(CourageError::config(format!(
                "period '{part}' is not 'start:end'"
            )));
        };
        let parse = |s: &str| {
            NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
                .map_err(|_| CourageError::config(format!("bad date '{s}' in --periods")))
        };
        out.push((parse(start)?, parse(end)?));
    }
    Ok(out)
}
