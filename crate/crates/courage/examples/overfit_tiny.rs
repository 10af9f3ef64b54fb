//! Sanity run: memorize 10 fixed windows. With working gradients the Huber
//! loss collapses and the destandardized predictions land on the targets.
//!
//!     cargo run -p courage --example overfit_tiny

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use courage::augment::MixupConfig;
use courage::data::{Level, SampleWindow, Standardizer, FEATURE_DIM};
use courage::model::{forward, ModelConfig};
use courage::numerics::Matrix;
use courage::train::{train, TrainConfig};

fn main() -> courage::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let windows: Vec<SampleWindow> = (0..10)
        .map(|i| {
            let mut features = Matrix::zeros(FEATURE_DIM, 7);
            for r in 0..FEATURE_DIM {
                for c in 0..7 {
                    features.set(r, c, rng.random_range(-2.0..2.0));
                }
            }
            SampleWindow {
                location: format!("{:05}", 1001 + 2 * i),
                level: Level::County,
                state: "AL".into(),
                anchor: NaiveDate::from_ymd_opt(2020, 6, 1).unwrap(),
                features,
                target_week1: rng.random_range(10.0..25.0),
                target_week2: rng.random_range(10.0..25.0),
            }
        })
        .collect();

    let standardizer = Standardizer::fit(&windows)?;
    let set = standardizer.apply_all(&windows);

    let model_config = ModelConfig::default_for(FEATURE_DIM);
    let train_config = TrainConfig {
        epochs: 500,
        batch_size: 2,
        seed: 0,
        ..TrainConfig::default()
    };
    println!("training on 10 windows for {} epochs...", train_config.epochs);
    let output = train(&set.samples, &model_config, &train_config, &MixupConfig::default())?;

    println!("\nepoch     lr        train loss");
    for stat in output.curve.iter().step_by(100).chain(output.curve.last()) {
        println!("{:>5}  {:<9} {:.3e}", stat.epoch, stat.lr, stat.train_loss);
    }

    println!("\npredictions vs targets (deaths):");
    for (sample, window) in set.samples.iter().zip(&windows) {
        let (z1, z2) = forward(&output.params, &model_config, &sample.features)?;
        let (p1, p2) = standardizer.destandardize_targets(z1, z2);
        println!(
            "  {}: week1 {:>6.2} vs {:>6.2}   week2 {:>6.2} vs {:>6.2}",
            window.location, p1, window.target_week1, p2, window.target_week2
        );
    }
    Ok(())
}
