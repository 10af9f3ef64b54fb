use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gradient_check, Graph, Matrix, NodeId};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Random matrix whose entries stay away from zero, for ops with a kink
/// there (relu) where finite differences are ill-defined.
fn random_matrix_off_kink(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                sign * rng.random_range(0.05..1.0)
            })
            .collect(),
    )
    .unwrap()
}

/// Scalarizes an op output against a fixed random weight so that no
/// direction of the output is invisible to the loss.
fn weighted_sum(g: &mut Graph, out: NodeId, weight: &Matrix) -> NodeId {
    let w = g.leaf(weight.clone());
    let prod = g.hadamard(out, w).unwrap();
    g.sum_all(prod)
}

type LossBuilder = Box<dyn Fn(&mut Graph, &[NodeId]) -> crate::Result<NodeId>>;

#[test]
fn matmul_identity_and_hand_case() {
    let mut g = Graph::new();
    let m = g.leaf(random_matrix(&mut ChaCha8Rng::seed_from_u64(1), 3, 3));
    let id = g.leaf(Matrix::identity(3));
    let prod = g.matmul(id, m).unwrap();
    assert_eq!(g.value(prod), g.value(m));

    let a = g.leaf(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let b = g.leaf(Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(
        g.value(c),
        &Matrix::from_rows(&[vec![2.0], vec![4.0]]).unwrap()
    );
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_matrix(&mut rng, 3, 4);
    let b = random_matrix(&mut rng, 4, 2);
    let err = gradient_check(
        |g, params| {
            let prod = g.matmul(params[0], params[1])?;
            Ok(g.sum_all(prod))
        },
        &[a, b],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "matmul gradient error {err}");
}

#[test]
fn softmax_uniform_shift_and_hand_cases() {
    let mut g = Graph::new();
    let a = g.leaf(Matrix::from_rows(&[vec![0.0, 0.0, 0.0, 0.0]]).unwrap());
    let s = g.softmax_rows(a).unwrap();
    for &v in g.value(s).data() {
        assert!((v - 0.25).abs() < 1e-15);
    }

    let big = g.leaf(Matrix::from_rows(&[vec![1000.0, 1000.0]]).unwrap());
    let s = g.softmax_rows(big).unwrap();
    assert!(g.value(s).is_finite());
    assert!((g.value(s).get(0, 0) - 0.5).abs() < 1e-15);

    let ln3 = g.leaf(Matrix::from_rows(&[vec![0.0, 3.0_f64.ln()]]).unwrap());
    let s = g.softmax_rows(ln3).unwrap();
    assert!((g.value(s).get(0, 0) - 0.25).abs() < 1e-12);
    assert!((g.value(s).get(0, 1) - 0.75).abs() < 1e-12);
}

#[test]
fn softmax_rows_sum_to_one() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let a = g.leaf(random_matrix(&mut rng, 5, 6).scale(20.0));
        let s = g.softmax_rows(a).unwrap();
        let out = g.value(s);
        for r in 0..out.rows() {
            let sum: f64 = out.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
            assert!(out.row(r).iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn relu_values_and_gradient_gate() {
    let mut g = Graph::new();
    let a = g.leaf(Matrix::from_rows(&[vec![-1.0, 0.0, 2.0]]).unwrap());
    let r = g.relu(a);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);

    let neg = g.leaf(Matrix::filled(2, 2, -3.0));
    let r = g.relu(neg);
    assert_eq!(g.value(r), &Matrix::zeros(2, 2));

    let mut g = Graph::new();
    let x = g.leaf(Matrix::from_rows(&[vec![5.0, -5.0]]).unwrap());
    let r = g.relu(x);
    let loss = g.sum_all(r);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).data(), &[1.0, 0.0]);
}

#[test]
fn add_identity_and_bias_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_matrix(&mut rng, 3, 3);
    let mut g = Graph::new();
    let a = g.leaf(m.clone());
    let zero = g.leaf(Matrix::zeros(3, 3));
    let s = g.add(a, zero).unwrap();
    assert_eq!(g.value(s), &m);

    let bias0 = g.leaf(Matrix::zeros(1, 3));
    let b = g.broadcast_add_bias(a, bias0).unwrap();
    assert_eq!(g.value(b), &m);
}

#[test]
fn transpose_scale_rowselect_concat_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = random_matrix(&mut rng, 2, 5);
    let mut g = Graph::new();
    let a = g.leaf(m.clone());
    let t = g.transpose(a);
    let tt = g.transpose(t);
    assert_eq!(g.value(tt), &m);

    let s = g.scale(a, 1.0);
    assert_eq!(g.value(s), &m);

    let cat = g.concat_cols(&[a]).unwrap();
    assert_eq!(g.value(cat), &m);
    let cat = g.concat_rows(&[a]).unwrap();
    assert_eq!(g.value(cat), &m);

    let single = g.leaf(random_matrix(&mut rng, 1, 4));
    let row = g.row_select(single, 0).unwrap();
    assert_eq!(g.value(row), g.value(single));

    let mr = g.mean_rows(row).unwrap();
    assert_eq!(g.value(mr), g.value(single));
}

#[test]
fn every_differentiable_op_matches_finite_differences() {
    // 100 seeds x random 4x4 inputs, checked within 1e-6 relative error.
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix_off_kink(&mut rng, 4, 4);
        let y = random_matrix_off_kink(&mut rng, 4, 4);
        let w = random_matrix(&mut rng, 4, 4);
        let w14 = random_matrix(&mut rng, 1, 4);
        let w44t = random_matrix(&mut rng, 4, 4);
        let bias = random_matrix(&mut rng, 1, 4);
        let gain = random_matrix_off_kink(&mut rng, 1, 4);
        let target = random_matrix(&mut rng, 4, 4).scale(3.0);

        let cases: Vec<(&str, LossBuilder)> = vec![
            (
                "add",
                Box::new({
                    let w = w.clone();
                    move |g, p| {
                        let out = g.add(p[0], p[1])?;
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "sub",
                Box::new({
                    let w = w.clone();
                    move |g, p| {
                        let out = g.sub(p[0], p[1])?;
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "matmul",
                Box::new({
                    let w = w.clone();
                    move |g, p| {
                        let out = g.matmul(p[0], p[1])?;
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "hadamard",
                Box::new({
                    let w = w.clone();
                    move |g, p| {
                        let out = g.hadamard(p[0], p[1])?;
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "transpose",
                Box::new({
                    let w = w44t.clone();
                    move |g, p| {
                        let out = g.transpose(p[0]);
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "scale",
                Box::new({
                    let w = w.clone();
                    move |g, p| {
                        let out = g.scale(p[0], -1.7);
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "relu",
                Box::new({
                    let w = w.clone();
                    move |g, p| {
                        let out = g.relu(p[0]);
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "softmax_rows",
                Box::new({
                    let w = w.clone();
                    move |g, p| {
                        let out = g.softmax_rows(p[0])?;
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "concat_cols",
                Box::new({
                    let w = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xc0), 4, 8);
                    move |g, p| {
                        let out = g.concat_cols(&[p[0], p[1]])?;
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "concat_rows",
                Box::new({
                    let w = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xc1), 8, 4);
                    move |g, p| {
                        let out = g.concat_rows(&[p[0], p[1]])?;
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "row_select",
                Box::new({
                    let w = w14.clone();
                    move |g, p| {
                        let out = g.row_select(p[0], 2)?;
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "mean_rows",
                Box::new({
                    let w = w14.clone();
                    move |g, p| {
                        let out = g.mean_rows(p[0])?;
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "broadcast_add_bias",
                Box::new({
                    let w = w.clone();
                    let bias = bias.clone();
                    move |g, p| {
                        let b = g.leaf(bias.clone());
                        let out = g.broadcast_add_bias(p[0], b)?;
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "layer_norm_rows",
                Box::new({
                    let w = w.clone();
                    let gain = gain.clone();
                    let bias = bias.clone();
                    move |g, p| {
                        let gn = g.leaf(gain.clone());
                        let bn = g.leaf(bias.clone());
                        let out = g.layer_norm_rows(p[0], gn, bn, 1e-5)?;
                        Ok(weighted_sum(g, out, &w))
                    }
                }),
            ),
            (
                "huber_loss",
                Box::new({
                    let target = target.clone();
                    move |g, p| g.huber_loss(p[0], &target, 1.0)
                }),
            ),
        ];

        for (name, build) in cases {
            let err = gradient_check(&build, &[x.clone(), y.clone()], 1e-5)
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(err < 1e-6, "{name} gradient error {err} at seed {seed}");
        }
    }
}

#[test]
fn layer_norm_gradient_through_gain_and_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_matrix(&mut rng, 3, 5);
    let gain = random_matrix_off_kink(&mut rng, 1, 5);
    let bias = random_matrix(&mut rng, 1, 5);
    let w = random_matrix(&mut rng, 3, 5);
    let err = gradient_check(
        |g, p| {
            let out = g.layer_norm_rows(p[0], p[1], p[2], 1e-5)?;
            Ok(weighted_sum(g, out, &w))
        },
        &[x, gain, bias],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "layer norm param gradient error {err}");
}

#[test]
fn backward_sum_of_parameters_gives_unit_gradients() {
    let mut g = Graph::new();
    let a = g.leaf(Matrix::filled(2, 3, 1.5));
    let b = g.leaf(Matrix::filled(2, 3, -0.5));
    let s = g.add(a, b).unwrap();
    let loss = g.sum_all(s);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(a), &Matrix::filled(2, 3, 1.0));
    assert_eq!(g.grad(b), &Matrix::filled(2, 3, 1.0));
}

#[test]
fn backward_squared_norm_gives_two_w() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = random_matrix(&mut rng, 3, 3);
    let mut g = Graph::new();
    let wn = g.leaf(w.clone());
    let sq = g.hadamard(wn, wn).unwrap();
    let loss = g.sum_all(sq);
    g.backward(loss).unwrap();
    let expect = w.scale(2.0);
    for (a, b) in g.grad(wn).data().iter().zip(expect.data()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn backward_rejects_non_scalar_and_repeat_calls() {
    let mut g = Graph::new();
    let a = g.leaf(Matrix::zeros(2, 2));
    assert!(g.backward(a).is_err());

    let mut g = Graph::new();
    let a = g.leaf(Matrix::filled(1, 1, 2.0));
    let loss = g.scale(a, 3.0);
    g.backward(loss).unwrap();
    let second = g.backward(loss);
    assert!(second.is_err(), "second backward must be rejected");
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut g = Graph::new();
        let a = g.leaf(random_matrix(&mut rng, 4, 4));
        let b = g.leaf(random_matrix(&mut rng, 4, 4));
        let prod = g.matmul(a, b).unwrap();
        let sm = g.softmax_rows(prod).unwrap();
        let loss = g.sum_all(sm);
        g.backward(loss).unwrap();
        (g.grad(a).clone(), g.grad(b).clone())
    };
    let (ga1, gb1) = run();
    let (ga2, gb2) = run();
    assert_eq!(ga1.data(), ga2.data());
    assert_eq!(gb1.data(), gb2.data());
}

#[test]
fn gradient_check_constant_is_zero() {
    let err = gradient_check(
        |g, _p| Ok(g.leaf(Matrix::filled(1, 1, 42.0))),
        &[Matrix::filled(2, 2, 1.0)],
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn gradient_check_square_at_one() {
    // f(x) = x^2 at x = 1: analytic 2 vs (1.00001^2 - 0.99999^2) / 2e-5.
    let err = gradient_check(
        |g, p| {
            let sq = g.hadamard(p[0], p[0])?;
            Ok(g.sum_all(sq))
        },
        &[Matrix::filled(1, 1, 1.0)],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8, "x^2 gradient error {err}");
}

#[test]
fn gradient_check_rejects_bad_epsilon() {
    let res = gradient_check(
        |g, p| Ok(g.sum_all(p[0])),
        &[Matrix::filled(1, 1, 1.0)],
        0.0,
    );
    assert!(res.is_err());
}

#[test]
fn huber_loss_node_value() {
    let mut g = Graph::new();
    let pred = g.leaf(Matrix::from_rows(&[vec![0.5, 3.0]]).unwrap());
    let target = Matrix::zeros(1, 2);
    let loss = g.huber_loss(pred, &target, 1.0).unwrap();
    // mean(0.125, 2.5)
    assert!((g.value(loss).get(0, 0) - 1.3125).abs() < 1e-15);
}
