//! Thin CLI over the library pipeline: ingest -> train -> predict ->
//! evaluate. Set RUST_LOG=info (or debug) for progress logging.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use courage::augment::MixupConfig;
use courage::error::CourageError;
use courage::forecast::TruthKind;
use courage::model::Pooling;
use courage::pipeline::{
    cmd_evaluate, cmd_ingest, cmd_predict, cmd_train, load_config_file, parse_periods,
    EvaluateArgs, IngestArgs, PredictArgs, TrainArgs, TrainLevel,
};
use courage::train::TrainConfig;

#[derive(Parser)]
#[command(
    name = "courage",
    version,
    about = "Two-week county/state COVID-19 death forecasting with a transformer encoder"
)]
struct Cli {
    /// Plain-text `key = value` config file; explicit flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the raw CSVs into the binary dataset cache.
    Ingest {
        /// JHU-style wide CSV of cumulative confirmed cases.
        #[arg(long)]
        cases: Option<PathBuf>,
        /// JHU-style wide CSV of cumulative deaths (with Population).
        #[arg(long)]
        deaths: Option<PathBuf>,
        /// Google-style community mobility CSV.
        #[arg(long)]
        mobility: Option<PathBuf>,
        /// Output directory for the cache and manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model checkpoint from the cache.
    Train {
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train fraction of the date span (0.5, 0.6, 0.7, 0.8, ...).
        #[arg(long)]
        split: Option<f64>,
        /// Enable mixup augmentation (the Mixup model).
        #[arg(long)]
        mixup: bool,
        #[arg(long)]
        mixup_alpha: Option<f64>,
        /// Checkpoint label; defaults to County, Mixup or State by flags.
        #[arg(long)]
        label: Option<String>,
        /// Windows used for training: both | county | state.
        #[arg(long)]
        train_level: Option<String>,
        /// Days between consecutive training anchors.
        #[arg(long)]
        stride: Option<usize>,
        /// Encoder pooling before the decoder: last | mean.
        #[arg(long)]
        pooling: Option<String>,
        /// Drop residual connections and layer norm (literal-equation mode).
        #[arg(long)]
        no_residual_layernorm: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_halving_period: Option<usize>,
        /// Huber transition point in standardized target units.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable the global gradient-norm clip.
        #[arg(long)]
        no_grad_clip: bool,
    },
    /// Emit forecast CSVs (Naive, per-checkpoint, aggregated, ensemble).
    Predict {
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Checkpoints to run; County + Mixup together also emit COURAGE.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        split: Option<f64>,
        /// Days between evaluation anchors.
        #[arg(long)]
        eval_stride: Option<usize>,
    },
    /// Score forecast CSVs against observed weekly totals.
    Evaluate {
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Forecast CSVs from `predict`; repeatable.
        #[arg(long = "forecast")]
        forecasts: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Truth series: raw | smoothed.
        #[arg(long)]
        truth: Option<String>,
        /// Comma-separated `start:end` periods; defaults to the built-in
        /// backtest ranges.
        #[arg(long)]
        periods: Option<String>,
        /// Label recorded in the report's split column.
        #[arg(long)]
        split_label: Option<String>,
    },
}

struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    fn get<T: FromStr>(&self, key: &str) -> courage::Result<Option<T>> {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CourageError::Config(format!("config key '{key}': cannot parse '{raw}'"))
            }),
        }
    }

    /// CLI value if given, else config-file value, else default.
    fn resolve<T: FromStr>(&self, cli: Option<T>, key: &str, default: T) -> courage::Result<T> {
        match cli {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    fn resolve_required<T: FromStr>(&self, cli: Option<T>, key: &str) -> courage::Result<T> {
        match cli {
            Some(v) => Ok(v),
            None => self.get(key)?.ok_or_else(|| {
                CourageError::Config(format!("missing required option --{key} (or config key)"))
            }),
        }
    }

    fn flag(&self, cli: bool, key: &str) -> courage::Result<bool> {
        if cli {
            return Ok(true);
        }
        Ok(self.get::<bool>(key)?.unwrap_or(false))
    }
}

fn run() -> courage::Result<()> {
    let cli = Cli::parse();
    let settings = Settings {
        file: match &cli.config {
            Some(path) => load_config_file(path)?,
            None => BTreeMap::new(),
        },
    };

    match cli.command {
        Command::Ingest {
            cases,
            deaths,
            mobility,
            out,
        } => {
            let args = IngestArgs {
                cases: settings.resolve_required(cases, "cases")?,
                deaths: settings.resolve_required(deaths, "deaths")?,
                mobility: settings.resolve_required(mobility, "mobility")?,
                out_dir: settings.resolve(out, "out", PathBuf::from("artifacts"))?,
            };
            let summary = cmd_ingest(&args)?;
            println!(
                "ingested {} counties / {} states over {}..{}",
                summary.counties, summary.states, summary.first_date, summary.last_date
            );
            println!("cache   {}", summary.cache_path.display());
            println!("sha256  {}", summary.cache_sha256);
            println!("manifest {}", summary.manifest_path.display());
            Ok(())
        }
        Command::Train {
            cache,
            out,
            split,
            mixup,
            mixup_alpha,
            label,
            train_level,
            stride,
            pooling,
            no_residual_layernorm,
            epochs,
            lr,
            lr_halving_period,
            delta,
            batch_size,
            seed,
            no_grad_clip,
        } => {
            let cache = settings.resolve_required(cache, "cache")?;
            let out_dir = settings.resolve(out, "out", PathBuf::from("artifacts"))?;
            let mut args = TrainArgs::new(cache, out_dir);
            args.split = settings.resolve(split, "split", 0.8)?;
            args.mixup = MixupConfig {
                enabled: settings.flag(mixup, "mixup")?,
                alpha: settings.resolve(mixup_alpha, "mixup_alpha", 0.2)?,
            };
            args.label = match label {
                Some(l) => Some(l),
                None => settings.get::<String>("label")?,
            };
            args.train_level =
                TrainLevel::from_str(&settings.resolve(train_level, "train_level", "both".into())?)?;
            args.stride = settings.resolve(stride, "stride", 1)?;
            args.pooling =
                Pooling::from_str(&settings.resolve(pooling, "pooling", "last".into())?)?;
            args.residual_layernorm = !settings.flag(no_residual_layernorm, "no_residual_layernorm")?;
            args.train = TrainConfig {
                epochs: settings.resolve(epochs, "epochs", 500)?,
                initial_lr: settings.resolve(lr, "lr", 1e-3)?,
                lr_halving_period: settings.resolve(lr_halving_period, "lr_halving_period", 100)?,
                huber_delta: settings.resolve(delta, "delta", 1.0)?,
                batch_size: settings.resolve(batch_size, "batch_size", 128)?,
                seed: settings.resolve(seed, "seed", 0)?,
                grad_clip: if settings.flag(no_grad_clip, "no_grad_clip")? {
                    None
                } else {
                    Some(5.0)
                },
                ..TrainConfig::default()
            };

            let summary = cmd_train(&args)?;
            println!(
                "trained {} on {} windows (cutoff {})",
                summary.label, summary.train_windows, summary.cutoff
            );
            if let Some(loss) = summary.final_loss {
                println!("final train loss {loss:.6}");
            }
            println!("checkpoint {}", summary.checkpoint_path.display());
            println!("loss curve {}", summary.loss_csv_path.display());
            if let Some(reason) = &summary.abort {
                return Err(CourageError::Numeric(format!(
                    "training aborted: {reason}; checkpoint holds the last good parameters"
                )));
            }
            Ok(())
        }
        Command::Predict {
            cache,
            checkpoints,
            out,
            split,
            eval_stride,
        } => {
            let args = PredictArgs {
                cache: settings.resolve_required(cache, "cache")?,
                checkpoints,
                out_dir: settings.resolve(out, "out", PathBuf::from("artifacts"))?,
                split: settings.resolve(split, "split", 0.8)?,
                eval_stride: settings.resolve(eval_stride, "eval_stride", 7)?,
            };
            let summary = cmd_predict(&args)?;
            println!(
                "predicted {} weekly anchors after cutoff {}",
                summary.anchors.len(),
                summary.cutoff
            );
            for file in &summary.forecast_files {
                println!("forecast {}", file.display());
            }
            Ok(())
        }
        Command::Evaluate {
            cache,
            forecasts,
            out,
            truth,
            periods,
            split_label,
        } => {
            let args = EvaluateArgs {
                cache: settings.resolve_required(cache, "cache")?,
                forecasts,
                out_dir: settings.resolve(out, "out", PathBuf::from("artifacts"))?,
                truth: TruthKind::from_str(&settings.resolve(truth, "truth", "raw".into())?)?,
                periods: match settings.resolve(periods, "periods", String::new())? {
                    s if s.is_empty() => None,
                    s => Some(parse_periods(&s)?),
                },
                split_label: settings.resolve(split_label, "split_label", "-".into())?,
            };
            let summary = cmd_evaluate(&args)?;
            println!("report {}", summary.report_path.display());
            for row in &summary.report.rows {
                if let Some(mae) = row.mae {
                    println!(
                        "{:<8} {:<7} week{} {}..{}  mae {:.4}  ({} anchors, {} locations)",
                        row.model,
                        row.level.as_str(),
                        row.horizon,
                        row.period_start,
                        row.period_end,
                        mae,
                        row.n_anchors,
                        row.n_locations
                    );
                }
            }
            for (model, count) in &summary.report.excluded_anchors {
                println!("note: {model}: {count} anchors outside all periods");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CourageError::MissingInput(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
