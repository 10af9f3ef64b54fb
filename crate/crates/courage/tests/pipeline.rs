//! Integration tests for the ingest/train/predict/evaluate pipeline and the
//! courage binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::NaiveDate;

use courage::augment::MixupConfig;
use courage::data::{cache::read_cache, windows::all_windows, Level};
use courage::forecast::read_forecast_csv;
use courage::pipeline::{
    cmd_evaluate, cmd_ingest, cmd_predict, cmd_train, load_config_file, parse_periods,
    EvaluateArgs, IngestArgs, PredictArgs, TrainArgs,
};
use courage::synthetic::{generate, write_dataset_csvs, SyntheticConfig};
use courage::train::TrainConfig;

fn d(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    cache: PathBuf,
}

fn ingest_synthetic(counties: usize, states: usize, days: usize, seed: u64) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let config = SyntheticConfig {
        counties,
        states,
        days,
        seed,
        ..SyntheticConfig::default()
    };
    let rows = generate(&config);
    let paths = write_dataset_csvs(&rows, config.start, dir.path()).unwrap();
    let out = dir.path().join("artifacts");
    let summary = cmd_ingest(&IngestArgs {
        cases: paths.cases,
        deaths: paths.deaths,
        mobility: paths.mobility,
        out_dir: out.clone(),
    })
    .unwrap();
    Workspace {
        root: dir.path().to_path_buf(),
        _dir: dir,
        cache: summary.cache_path,
    }
}

fn quick_train(ws: &Workspace, sub: &str, mixup: bool, seed: u64) -> PathBuf {
    let mut args = TrainArgs::new(ws.cache.clone(), ws.root.join(sub));
    args.split = 0.7;
    args.mixup = MixupConfig {
        enabled: mixup,
        alpha: 0.2,
    };
    args.train = TrainConfig {
        epochs: 2,
        batch_size: 128,
        seed,
        ..TrainConfig::default()
    };
    cmd_train(&args).unwrap().checkpoint_path
}

#[test]
fn fixture_cache_has_expected_window_count() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_ingest(&IngestArgs {
        cases: fixtures.join("naive_cases.csv"),
        deaths: fixtures.join("naive_deaths.csv"),
        mobility: fixtures.join("naive_mobility.csv"),
        out_dir: dir.path().to_path_buf(),
    })
    .unwrap();
    let dataset = read_cache(&summary.cache_path).unwrap();
    // 42 days, window 7, 14 target days: 22 anchors per location.
    assert_eq!(all_windows(&dataset, Level::County, 7, 1).len(), 9 * 22);
    assert_eq!(all_windows(&dataset, Level::State, 7, 1).len(), 3 * 22);
}

#[test]
fn split_08_stamps_report_cutoff_into_manifest() {
    // Full report date range: 2020-03-07 ..= 2021-02-07 is 338 days.
    let ws = ingest_synthetic(6, 2, 338, 1);
    let mut args = TrainArgs::new(ws.cache.clone(), ws.root.join("train"));
    args.split = 0.8;
    args.stride = 7;
    args.train = TrainConfig {
        epochs: 1,
        batch_size: 256,
        seed: 0,
        ..TrainConfig::default()
    };
    let summary = cmd_train(&args).unwrap();
    assert_eq!(summary.cutoff, d("2020-12-01"));

    let manifest = std::fs::read_to_string(&summary.manifest_path).unwrap();
    assert!(
        manifest.contains("\"cutoff\": \"2020-12-01\""),
        "manifest missing cutoff stamp: {manifest}"
    );
}

#[test]
fn loss_csv_has_one_row_per_epoch() {
    let ws = ingest_synthetic(5, 2, 60, 2);
    let mut args = TrainArgs::new(ws.cache.clone(), ws.root.join("train"));
    args.split = 0.7;
    args.train = TrainConfig {
        epochs: 7,
        batch_size: 256,
        seed: 0,
        ..TrainConfig::default()
    };
    let summary = cmd_train(&args).unwrap();
    let text = std::fs::read_to_string(&summary.loss_csv_path).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "epoch,lr,train_loss");
    assert_eq!(rows.len(), 1 + 7);
}

#[test]
fn mixup_flag_produces_distinct_checkpoint_same_architecture() {
    let ws = ingest_synthetic(6, 2, 60, 3);
    let county = quick_train(&ws, "county", false, 5);
    let mixup = quick_train(&ws, "mixup", true, 5);
    let county_bytes = std::fs::read(&county).unwrap();
    let mixup_bytes = std::fs::read(&mixup).unwrap();
    assert_ne!(county_bytes, mixup_bytes, "mixup must change the trajectory");

    // Re-running the county configuration reproduces its checkpoint hash.
    let county_again = quick_train(&ws, "county2", false, 5);
    assert_eq!(county_bytes, std::fs::read(&county_again).unwrap());
}

#[test]
fn courage_csv_is_rowwise_mean_of_members() {
    let ws = ingest_synthetic(8, 2, 70, 4);
    let county = quick_train(&ws, "c", false, 1);
    let mixup = quick_train(&ws, "m", true, 1);
    let predict = cmd_predict(&PredictArgs {
        cache: ws.cache.clone(),
        checkpoints: vec![county, mixup],
        out_dir: ws.root.join("pred"),
        split: 0.7,
        eval_stride: 7,
    })
    .unwrap();

    let find = |name: &str| {
        let path = predict
            .forecast_files
            .iter()
            .find(|p| p.file_name().unwrap().to_str().unwrap() == name)
            .unwrap_or_else(|| panic!("missing {name}"));
        read_forecast_csv(path).unwrap().remove(0)
    };
    let county = find("County_county.csv");
    let mixup = find("Mixup_county.csv");
    let courage = find("COURAGE_county.csv");
    assert_eq!(courage.entries.len(), county.entries.len());
    for ((e, c), m) in courage.entries.iter().zip(&county.entries).zip(&mixup.entries) {
        assert_eq!(e.location, c.location);
        assert_eq!(e.week1, (c.week1 + m.week1) / 2.0);
        assert_eq!(e.week2, (c.week2 + m.week2) / 2.0);
    }
}

#[test]
fn naive_only_evaluation_without_checkpoints() {
    let ws = ingest_synthetic(6, 2, 338, 6);
    let predict = cmd_predict(&PredictArgs {
        cache: ws.cache.clone(),
        checkpoints: vec![],
        out_dir: ws.root.join("pred"),
        split: 0.8,
        eval_stride: 7,
    })
    .unwrap();
    assert_eq!(predict.forecast_files.len(), 2, "naive county + state only");

    let eval = cmd_evaluate(&EvaluateArgs {
        cache: ws.cache.clone(),
        forecasts: predict.forecast_files.clone(),
        out_dir: ws.root.join("eval"),
        truth: courage::forecast::TruthKind::Raw,
        periods: None,
        split_label: "0.8".into(),
    })
    .unwrap();

    // One row per (model, level, horizon, period): 1 model x 2 levels x
    // 2 horizons x 5 default periods.
    assert_eq!(eval.report.rows.len(), 2 * 2 * 5);
    let starts: Vec<NaiveDate> = eval
        .report
        .rows
        .iter()
        .map(|r| r.period_start)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    assert_eq!(
        starts,
        vec![
            d("2020-08-23"),
            d("2020-09-25"),
            d("2020-10-29"),
            d("2020-12-02"),
            d("2021-01-18"),
        ],
        "default period boundaries"
    );
    // The 0.8-split anchors land in the 2020-12-02..2021-01-17 period.
    let populated = eval
        .report
        .rows
        .iter()
        .find(|r| r.period_start == d("2020-12-02") && r.level == Level::County && r.horizon == 1)
        .unwrap();
    assert!(populated.mae.is_some());
    assert!(populated.n_anchors > 0);

    let report_csv = std::fs::read_to_string(&eval.report_path).unwrap();
    assert!(report_csv.starts_with(
        "model,split,level,horizon,period_start,period_end,mae,n_anchors,n_locations"
    ));

    // Plot data exists for each state with forecasts.
    assert_eq!(eval.plot_paths.len(), 2);
    let plot = std::fs::read_to_string(&eval.plot_paths[0]).unwrap();
    assert!(plot.starts_with("date,horizon,target,naive,county,mixup,courage"));
}

/// Consistency oracle: the week-0 deaths reconstructed from a window's raw
/// new-deaths feature row must match the sum independently recomputed from
/// the per-day records.
#[test]
fn window_week0_matches_daily_records() {
    let ws = ingest_synthetic(5, 2, 50, 10);
    let dataset = read_cache(&ws.cache).unwrap();
    let records = dataset.daily_records(Level::County);

    for window in all_windows(&dataset, Level::County, 7, 3) {
        let from_window: f64 = window.features.row(courage::data::ROW_NEW_DEATHS).iter().sum();

        // Independent recomputation: difference the cumulative deaths of
        // this location's records over the window span.
        let loc_records: Vec<_> = records
            .iter()
            .filter(|r| r.location == window.location)
            .collect();
        let anchor_idx = loc_records
            .iter()
            .position(|r| r.date == window.anchor)
            .unwrap();
        let at = |i: usize| loc_records[i].cumulative_deaths as f64;
        let from_records = if anchor_idx >= 7 {
            at(anchor_idx) - at(anchor_idx - 7)
        } else {
            at(anchor_idx)
        };
        assert_eq!(
            from_window, from_records,
            "{} at {}",
            window.location, window.anchor
        );
    }
}

/// The State baseline trains on state windows only and predicts states
/// directly, without county aggregation.
#[test]
fn state_model_predicts_states_directly() {
    let ws = ingest_synthetic(6, 2, 60, 11);
    let mut args = TrainArgs::new(ws.cache.clone(), ws.root.join("state"));
    args.split = 0.7;
    args.train_level = courage::pipeline::TrainLevel::StateOnly;
    args.train = TrainConfig {
        epochs: 2,
        batch_size: 64,
        seed: 0,
        ..TrainConfig::default()
    };
    let summary = cmd_train(&args).unwrap();
    assert_eq!(summary.label, "State");

    let predict = cmd_predict(&PredictArgs {
        cache: ws.cache.clone(),
        checkpoints: vec![summary.checkpoint_path],
        out_dir: ws.root.join("pred"),
        split: 0.7,
        eval_stride: 7,
    })
    .unwrap();
    let state_file = predict
        .forecast_files
        .iter()
        .find(|p| p.file_name().unwrap().to_str().unwrap() == "State_state.csv")
        .expect("State model must emit a state-level CSV");
    let set = read_forecast_csv(state_file).unwrap().remove(0);
    assert!(!set.entries.is_empty());
    assert!(set.entries.iter().all(|e| e.location.len() == 2));
    // No county-level CSV for the State model.
    assert!(!predict
        .forecast_files
        .iter()
        .any(|p| p.file_name().unwrap().to_str().unwrap() == "State_county.csv"));
}

#[test]
fn predict_rejects_standardizer_mismatch() {
    let ws = ingest_synthetic(6, 2, 60, 8);
    let ckpt_path = quick_train(&ws, "t", false, 3);
    let checkpoint = courage::checkpoint::Checkpoint::load(&ckpt_path).unwrap();
    let dataset = read_cache(&ws.cache).unwrap();

    let windows = all_windows(&dataset, Level::County, 7, 7);
    let mut other = checkpoint.standardizer.clone();
    other.target_mean[0] += 1.0;
    let mismatched = other.apply_all(&windows);
    let err = courage::forecast::predict(&checkpoint, &mismatched, &Default::default());
    assert!(err.is_err(), "digest mismatch must be rejected");
}

#[test]
fn config_file_parsing_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(
        &path,
        "# comment line\nsplit = 0.6\nepochs = 3   # trailing comment\nseed=9\n",
    )
    .unwrap();
    let map = load_config_file(&path).unwrap();
    assert_eq!(map.get("split").unwrap(), "0.6");
    assert_eq!(map.get("epochs").unwrap(), "3");
    assert_eq!(map.get("seed").unwrap(), "9");

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "no equals sign here\n").unwrap();
    assert!(load_config_file(&bad).is_err());
}

#[test]
fn parse_periods_spec_strings() {
    let periods = parse_periods("2020-08-23:2020-09-24,2020-09-25:2020-10-28").unwrap();
    assert_eq!(periods.len(), 2);
    assert_eq!(periods[0].0, d("2020-08-23"));
    assert!(parse_periods("2020-08-23").is_err());
    assert!(parse_periods("a:b").is_err());
}

// ---------------------------------------------------------------------------
// binary-level checks

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_courage"))
}

#[test]
fn missing_mobility_file_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = SyntheticConfig {
        counties: 3,
        states: 1,
        days: 40,
        seed: 0,
        ..SyntheticConfig::default()
    };
    let rows = generate(&config);
    let paths = write_dataset_csvs(&rows, config.start, dir.path()).unwrap();
    let missing = dir.path().join("not_there.csv");

    let output = bin()
        .args([
            "ingest",
            "--cases",
            paths.cases.to_str().unwrap(),
            "--deaths",
            paths.deaths.to_str().unwrap(),
            "--mobility",
            missing.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("not_there.csv"),
        "stderr must name the missing path: {stderr}"
    );
}

#[test]
fn bin_ingest_with_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = SyntheticConfig {
        counties: 3,
        states: 1,
        days: 40,
        seed: 1,
        ..SyntheticConfig::default()
    };
    let rows = generate(&config);
    let paths = write_dataset_csvs(&rows, config.start, dir.path()).unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "cases = {}\ndeaths = {}\nmobility = {}\nout = {}\n",
            paths.cases.display(),
            paths.deaths.display(),
            paths.mobility.display(),
            dir.path().join("out").display(),
        ),
    )
    .unwrap();

    let output = bin()
        .args(["ingest", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{:?}", output);
    assert!(dir.path().join("out/windows_cache.bin").exists());
    assert!(dir.path().join("out/ingest_manifest.json").exists());
}

#[test]
fn malformed_csv_exits_nonzero_with_line_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cases = dir.path().join("cases.csv");
    // Bad count value on data line 2.
    std::fs::write(
        &cases,
        "UID,FIPS,Admin2,Province_State,Combined_Key,3/1/20,3/2/20\n\
         1,1001.0,Autauga,Alabama,x,0,1\n\
         2,1003.0,Baldwin,Alabama,x,0,oops\n",
    )
    .unwrap();
    let deaths = dir.path().join("deaths.csv");
    std::fs::write(
        &deaths,
        "UID,FIPS,Admin2,Province_State,Combined_Key,Population,3/1/20,3/2/20\n\
         1,1001.0,Autauga,Alabama,x,100,0,1\n",
    )
    .unwrap();
    let mobility = dir.path().join("mobility.csv");
    std::fs::write(&mobility, "sub_region_1,sub_region_2,date\n").unwrap();

    let output = bin()
        .args([
            "ingest",
            "--cases",
            cases.to_str().unwrap(),
            "--deaths",
            deaths.to_str().unwrap(),
            "--mobility",
            mobility.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("cases.csv") && stderr.contains(":3"),
        "diagnostics must carry file and line: {stderr}"
    );
}
