mod common;

use lvic::fusion::{gelu, Activation, FusionParams};
use lvic::painter::PaintLayout;
use lvic::sgd_step;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gelu_matches_independent_erf() {
    assert!((gelu(1.0) - 0.8413447461).abs() < 1e-10);
    for x in [-6.0, -2.0, -0.3, 0.7, 1.0, 3.5] {
        assert!((gelu(x) - common::erf_gelu(x)).abs() < 1e-13, "{x}");
    }
    assert_eq!(gelu(0.0), 0.0);
    assert!((gelu(10.0) - 10.0).abs() < 1e-9);
}

#[test]
fn forward_matches_plain_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for pair in 0..100 {
        let d = rng.random_range(1..=32);
        let e = rng.random_range(1..=24);
        let c = rng.random_range(3..=8);
        let params = FusionParams::init(d, e, rng.random());
        let row = match pair % 5 {
            // unpainted
            0 => {
                let mut r = common::random_painted_row(&mut rng, c, d, false);
                r[c..].iter_mut().for_each(|x| *x = -1.0);
                r
            }
            1 => common::random_painted_row(&mut rng, c, d, false),
            _ => common::random_painted_row(&mut rng, c, d, true),
        };
        let got = params.forward(&row, PaintLayout::new(d)).unwrap();
        let want = common::fusion_oracle(&params, &row);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "pair {pair}: {a} vs {b}");
        }
    }
}

#[test]
fn linear_path_is_homogeneous() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let d = rng.random_range(1..=16);
        let mut params = FusionParams::init(d, 8, rng.random());
        params.activation = Activation::Identity;
        let mut zero_bias = params.clone();
        for layer in zero_bias.layers_mut() {
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let layout = PaintLayout::new(d);
        let row = common::random_painted_row(&mut rng, 3, d, true);
        let alpha = rng.random_range(0.1..4.0);
        // positive scaling keeps the painted and depth gates where they were
        let scaled: Vec<f64> = row.iter().map(|x| x * alpha).collect();
        let y = zero_bias.forward(&row, layout).unwrap();
        let ys = zero_bias.forward(&scaled, layout).unwrap();
        for (a, b) in y.iter().zip(&ys) {
            assert!((b - alpha * a).abs() < 1e-9 * (1.0 + b.abs()), "{b} vs {}", alpha * a);
        }
        // with biases the map is affine: f(x) - f(0) is linear
        let f0 = params.forward(&zero_input(&row, 3), layout).unwrap();
        let fx = params.forward(&row, layout).unwrap();
        for ((full, origin), lin) in fx.iter().zip(&f0).zip(&y) {
            assert!((full - origin - lin).abs() < 1e-9 * (1.0 + full.abs()));
        }
    }
}

/// Zeroes every value except the gate channels, so the same branches are taken.
fn zero_input(row: &[f64], c: usize) -> Vec<f64> {
    let mut z = vec![0.0; row.len()];
    z[c] = row[c];
    z[c + 1] = row[c + 1];
    z[c + 2] = row[c + 2];
    z
}

#[test]
fn gradient_check_on_odd_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for config in 0..10 {
        let d = rng.random_range(1..=32);
        let e = rng.random_range(1..=20);
        let params = FusionParams::init(d, e, rng.random());
        let c = rng.random_range(3..=8);
        let row = common::random_painted_row(&mut rng, c, d, config % 3 != 0);
        let upstream: Vec<f64> = (0..e).map(|_| rng.random_range(-1.0..1.0)).collect();
        let worst = common::gradient_check(&params, &row, &upstream, 1e-6, 1e-3);
        assert!(worst < 1e-5, "config {config}: {worst:e}");
    }
}

#[test]
fn sgd_descends_a_quadratic() {
    // L(p) = 0.5 * sum a_i (p_i - q_i)^2 with curvatures a_i inside (0, 2 / lr)
    let lr = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut params = FusionParams::init(16, 16, 3);
    let target = FusionParams::init(16, 16, 4).flatten();
    let curv: Vec<f64> = target.iter().map(|_| rng.random_range(0.5..3.5)).collect();
    let loss = |p: &FusionParams| -> f64 {
        p.flatten()
            .iter()
            .zip(&target)
            .zip(&curv)
            .map(|((x, q), a)| 0.5 * a * (x - q).powi(2))
            .sum()
    };
    let mut last = loss(&params);
    for _ in 0..2 {
        let grad: Vec<f64> = params
            .flatten()
            .iter()
            .zip(&target)
            .zip(&curv)
            .map(|((x, q), a)| a * (x - q))
            .collect();
        params = sgd_step(&params, &params.unflatten(&grad).unwrap(), lr).unwrap();
        let now = loss(&params);
        assert!(now < last, "loss went from {last} to {now}");
        last = now;
    }
}

#[test]
fn backward_gradients_descend_the_output_norm() {
    // 0.5 * |f(x)|^2 has output gradient f(x)
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let layout = PaintLayout::new(16);
    let row = common::random_painted_row(&mut rng, 4, 16, true);
    let mut params = FusionParams::init(16, 16, 3);
    let loss = |p: &FusionParams| -> f64 {
        p.forward(&row, layout).unwrap().iter().map(|y| 0.5 * y * y).sum()
    };
    let mut last = loss(&params);
    for _ in 0..2 {
        let out = params.forward(&row, layout).unwrap();
        let grads = params.backward(&row, layout, &out).unwrap();
        params = sgd_step(&params, &grads.params, 1e-3).unwrap();
        let now = loss(&params);
        assert!(now < last, "loss went from {last} to {now}");
        last = now;
    }
}

proptest! {
    #[test]
    fn unpainted_rows_ignore_every_painted_channel(
        seed: u64,
        xyz in proptest::array::uniform3(-50.0f64..50.0),
        noise in proptest::collection::vec(-5.0f64..5.0, 18),
    ) {
        let d = 16;
        let params = FusionParams::init(d, 16, seed);
        let layout = PaintLayout::new(d);
        let mut row = xyz.to_vec();
        row.extend(std::iter::repeat_n(-1.0, 4 + d));
        let base = params.forward(&row, layout).unwrap();
        // u and v stay at -1; the other painted channels take arbitrary values
        let mut perturbed = row.clone();
        for (x, n) in perturbed[5..].iter_mut().zip(&noise) {
            *x = *n;
        }
        let after = params.forward(&perturbed, layout).unwrap();
        prop_assert!(base.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn sgd_with_zero_rate_is_identity(seed: u64) {
        let p = FusionParams::init(8, 4, seed);
        let g = FusionParams::init(8, 4, seed.wrapping_add(1));
        prop_assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
    }
}
