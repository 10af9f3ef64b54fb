//! Demonstrates the mixup augmentation: the Beta(alpha, alpha) mixing
//! weight and the convex interpolation of windows and targets.
//!
//!     cargo run -p courage --example mixup_demo

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use courage::augment::{mixup_pair, sample_lambda, MixupConfig};
use courage::data::{Level, StandardizedSample, FEATURE_DIM};
use courage::numerics::Matrix;

fn histogram(alpha: f64, seed: u64) {
    let config = MixupConfig::enabled(alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bins = [0usize; 10];
    let n = 50_000;
    for _ in 0..n {
        let lambda = sample_lambda(&config, &mut rng).unwrap();
        bins[(lambda * 10.0).min(9.0) as usize] += 1;
    }
    println!("lambda ~ Beta({alpha}, {alpha}):");
    for (i, count) in bins.iter().enumerate() {
        let bar = "#".repeat(count * 400 / n);
        println!("  [{:.1},{:.1}) {bar}", i as f64 / 10.0, (i + 1) as f64 / 10.0);
    }
    println!();
}

fn main() -> courage::Result<()> {
    println!("the default alpha = 0.2 concentrates mass near 0 and 1, so most");
    println!("augmented samples stay close to a real sample:\n");
    histogram(0.2, 1);
    println!("alpha = 1 mixes uniformly:\n");
    histogram(1.0, 2);

    let sample = |fill: f64, t1: f64, t2: f64| StandardizedSample {
        location: "01001".into(),
        level: Level::County,
        state: "AL".into(),
        anchor: NaiveDate::from_ymd_opt(2020, 6, 1).unwrap(),
        features: Matrix::filled(FEATURE_DIM, 7, fill),
        target_week1: t1,
        target_week2: t2,
    };
    let a = sample(1.0, 10.0, 20.0);
    let b = sample(-1.0, 30.0, 40.0);
    for lambda in [1.0, 0.75, 0.5, 0.0] {
        let mixed = mixup_pair(&a, &b, lambda)?;
        println!(
            "lambda {lambda:.2}: features {:+.2}, targets ({:.1}, {:.1})",
            mixed.features.get(0, 0),
            mixed.target_week1,
            mixed.target_week2
        );
    }
    println!("\nevery interpolated value lies between its two parents.");
    Ok(())
}
