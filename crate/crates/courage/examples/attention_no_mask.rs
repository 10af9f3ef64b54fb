//! Shows that attention within the one-week window is unmasked: every day
//! may attend to later days, because both prediction targets lie strictly
//! after the window.
//!
//!     cargo run -p courage --example attention_no_mask

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use courage::data::FEATURE_DIM;
use courage::model::{attention_weights, init_params, ModelConfig};
use courage::numerics::Matrix;

fn main() -> courage::Result<()> {
    let config = ModelConfig::default_for(FEATURE_DIM);
    let params = init_params(&config, 42);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let features = Matrix::from_vec(
        config.feature_dim,
        config.window_len,
        (0..config.feature_dim * config.window_len)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();

    let attn = attention_weights(&params, &config, &features)?;
    let head0 = &attn[0][0];

    println!(
        "attention weights of head 0 (rows = attending day, cols = attended day):\n"
    );
    print!("      ");
    for c in 0..config.window_len {
        print!("  day{c} ");
    }
    println!();
    for r in 0..head0.rows() {
        print!("day{r}: ");
        for c in 0..head0.cols() {
            print!(" {:.3} ", head0.get(r, c));
        }
        println!();
    }

    let mut future_mass = 0.0;
    for head in &attn[0] {
        for r in 0..head.rows() {
            for c in (r + 1)..head.cols() {
                future_mass += head.get(r, c);
            }
        }
    }
    let heads = attn[0].len();
    println!(
        "\nmass above the diagonal across all {heads} heads: {future_mass:.3} \
         (> 0, so future positions are visible)"
    );
    println!("every row sums to 1: each output is a convex mix of the value rows");
    Ok(())
}
