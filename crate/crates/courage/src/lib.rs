//! Two-week-ahead COVID-19 death forecasting for US counties and states.
//!
//! The pipeline ingests daily case/death counts and community-mobility data,
//! builds one-week feature windows per county, trains a small transformer
//! encoder regressor (optionally with mixup augmentation) on weekly-total
//! death targets, aggregates county predictions to states, and backtests
//! everything against a persistence baseline with MAE.
//!
//! The `examples/` directory is the best starting point; each example is a
//! runnable walkthrough of one capability. The `courage` binary wires the
//! same library calls into `ingest`/`train`/`predict`/`evaluate` subcommands.

pub mod augment;
mod binio;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod forecast;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod synthetic;
pub mod train;

pub use error::{CourageError, Result};
