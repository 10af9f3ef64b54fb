//! The whole pipeline on generated data: ingest CSVs, train the County,
//! Mixup and State models, forecast, ensemble, and score everything against
//! the persistence baseline.
//!
//!     cargo run -p courage --example synthetic_pipeline

use courage::augment::MixupConfig;
use courage::data::Level;
use courage::forecast::TruthKind;
use courage::pipeline::{
    cmd_evaluate, cmd_ingest, cmd_predict, cmd_train, EvaluateArgs, IngestArgs, PredictArgs,
    TrainArgs, TrainLevel,
};
use courage::synthetic::{generate, write_dataset_csvs, SyntheticConfig};
use courage::train::TrainConfig;

fn main() -> courage::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = SyntheticConfig {
        counties: 30,
        states: 5,
        days: 150,
        seed: 0,
        ..SyntheticConfig::default()
    };
    println!(
        "generating {} counties across {} states over {} days...",
        config.counties, config.states, config.days
    );
    let counties = generate(&config);
    let paths = write_dataset_csvs(&counties, config.start, dir.path())?;

    let artifacts = dir.path().join("artifacts");
    let ingest = cmd_ingest(&IngestArgs {
        cases: paths.cases,
        deaths: paths.deaths,
        mobility: paths.mobility,
        out_dir: artifacts.clone(),
    })?;
    println!(
        "ingested {} counties / {} states covering {}..{}",
        ingest.counties, ingest.states, ingest.first_date, ingest.last_date
    );

    let split = 0.7;
    let mut checkpoints = Vec::new();
    for (mixup, level, tag) in [
        (false, TrainLevel::Both, "County"),
        (true, TrainLevel::Both, "Mixup"),
        (false, TrainLevel::StateOnly, "State"),
    ] {
        let mut args = TrainArgs::new(ingest.cache_path.clone(), artifacts.clone());
        args.split = split;
        args.train_level = level;
        args.mixup = MixupConfig {
            enabled: mixup,
            alpha: 0.2,
        };
        args.train = TrainConfig {
            epochs: 60,
            lr_halving_period: 20,
            batch_size: 128,
            seed: 0,
            ..TrainConfig::default()
        };
        let summary = cmd_train(&args)?;
        println!(
            "trained {tag:<6} on {:>5} windows, final loss {:.4} (cutoff {})",
            summary.train_windows,
            summary.final_loss.unwrap_or(f64::NAN),
            summary.cutoff
        );
        checkpoints.push(summary.checkpoint_path);
    }

    let predict = cmd_predict(&PredictArgs {
        cache: ingest.cache_path.clone(),
        checkpoints,
        out_dir: artifacts.clone(),
        split,
        eval_stride: 7,
    })?;
    println!(
        "\nforecast {} weekly anchors after {}:",
        predict.anchors.len(),
        predict.cutoff
    );

    let eval = cmd_evaluate(&EvaluateArgs {
        cache: ingest.cache_path,
        forecasts: predict.forecast_files,
        out_dir: artifacts,
        truth: TruthKind::Raw,
        periods: Some(vec![(ingest.first_date, ingest.last_date)]),
        split_label: format!("{split}"),
    })?;

    for level in [Level::County, Level::State] {
        println!("\n  {} level MAE:", level.as_str());
        println!("  {:<8} {:>8} {:>8}", "model", "week1", "week2");
        for model in ["Naive", "State", "County", "Mixup", "COURAGE"] {
            let mae = |horizon: u8| {
                eval.report
                    .rows
                    .iter()
                    .find(|r| r.model == model && r.level == level && r.horizon == horizon)
                    .and_then(|r| r.mae)
            };
            if let (Some(w1), Some(w2)) = (mae(1), mae(2)) {
                println!("  {model:<8} {w1:>8.3} {w2:>8.3}");
            }
        }
    }
    println!("\nreport written to a tempdir that vanishes with the process;");
    println!("run the `courage` binary against real inputs to keep artifacts.");
    Ok(())
}
