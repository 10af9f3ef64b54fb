//! Validates the reverse-mode gradients against central finite differences,
//! first per operation, then through the whole encoder with the Huber loss.
//!
//!     cargo run -p courage --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use courage::model::{forward_on_graph, init_params, GraphParams, ModelConfig, Pooling};
use courage::numerics::{gradient_check, Matrix};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn main() -> courage::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    println!("per-operation checks (max relative error vs central differences):");
    let a = random_matrix(&mut rng, 4, 4);
    let b = random_matrix(&mut rng, 4, 4);

    let err = gradient_check(
        |g, p| {
            let prod = g.matmul(p[0], p[1])?;
            Ok(g.sum_all(prod))
        },
        &[a.clone(), b.clone()],
        1e-5,
    )?;
    println!("  matmul        {err:.3e}");

    let err = gradient_check(
        |g, p| {
            let sm = g.softmax_rows(p[0])?;
            let w = g.leaf(Matrix::from_vec(4, 4, (0..16).map(|i| i as f64 * 0.1).collect()).unwrap());
            let prod = g.hadamard(sm, w)?;
            Ok(g.sum_all(prod))
        },
        std::slice::from_ref(&a),
        1e-5,
    )?;
    println!("  softmax_rows  {err:.3e}");

    let err = gradient_check(
        |g, p| {
            let gain = g.leaf(Matrix::filled(1, 4, 1.1));
            let bias = g.leaf(Matrix::filled(1, 4, -0.2));
            let ln = g.layer_norm_rows(p[0], gain, bias, 1e-5)?;
            let w = g.leaf(b.clone());
            let prod = g.hadamard(ln, w)?;
            Ok(g.sum_all(prod))
        },
        std::slice::from_ref(&a),
        1e-5,
    )?;
    println!("  layer_norm    {err:.3e}");

    println!("\nwhole-model check on a small configuration, both sublayer modes:");
    for residual in [true, false] {
        let config = ModelConfig {
            feature_dim: 3,
            window_len: 4,
            model_dim: 8,
            heads: 2,
            key_dim: 4,
            value_dim: 4,
            ff_dim: 16,
            layers: 1,
            pooling: Pooling::LastRow,
            residual_layernorm: residual,
        };
        let params = init_params(&config, 1);
        let mut flat = Vec::new();
        params.for_each_tensor(|_, t| flat.push(t.clone()));
        let features = random_matrix(&mut rng, config.feature_dim, config.window_len);
        let target = Matrix::from_rows(&[vec![0.4, -0.9]]).unwrap();

        let config2 = config.clone();
        let err = gradient_check(
            move |g, leaves| {
                let gp = GraphParams::from_leaves(&config2, leaves);
                let out = forward_on_graph(g, &gp, &config2, &features)?;
                g.huber_loss(out, &target, 1.0)
            },
            &flat,
            1e-5,
        )?;
        println!(
            "  residual+layernorm {}: {} parameters, max rel err {err:.3e}",
            if residual { "on " } else { "off" },
            flat.iter().map(Matrix::len).sum::<usize>()
        );
    }
    Ok(())
}
