//! Finite-difference checks for every differentiable op, 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use umt_tensor::gradcheck::{check_gradients, worst};
use umt_tensor::{Graph, Padding, Result, Tensor, Var};

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-5;
const CONFIGS: usize = 20;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar read-out with a non-trivial gradient everywhere: mse against a
/// fixed random target.
fn readout(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rand_tensor(&mut rng, g.shape(y).to_vec());
    let t = g.constant(target);
    g.mse(y, t)
}

fn assert_ok(name: &str, cfg: usize, probes: &[umt_tensor::gradcheck::Probe]) {
    let w = worst(probes);
    assert!(w < TOL, "{name} config {cfg}: worst relative error {w:e}");
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for cfg in 0..CONFIGS {
        let (n, cin, cout) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let (h, w) = (rng.random_range(3..8), rng.random_range(3..8));
        let k = [1, 3][rng.random_range(0..2)];
        let padding = if cfg % 2 == 0 { Padding::Zero } else { Padding::Reflect };
        let inputs = vec![
            rand_tensor(&mut rng, vec![n, cin, h, w]),
            rand_tensor(&mut rng, vec![cout, cin, k, k]),
            rand_tensor(&mut rng, vec![cout]),
        ];
        let probes = check_gradients(&inputs, STEP, 20, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], padding)?;
            readout(g, y, cfg as u64)
        })
        .unwrap();
        assert_ok("conv2d", cfg, &probes);
    }
}

#[test]
fn pooling_and_upsampling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for cfg in 0..CONFIGS {
        let (n, c) = (rng.random_range(1..3), rng.random_range(1..4));
        let (h, w) = (2 * rng.random_range(1..5), 2 * rng.random_range(1..5));
        let x = vec![rand_tensor(&mut rng, vec![n, c, h, w])];
        let probes = check_gradients(&x, STEP, 20, |g, v| {
            let y = g.avg_pool2(v[0])?;
            readout(g, y, cfg as u64)
        })
        .unwrap();
        assert_ok("avg_pool2", cfg, &probes);
        let probes = check_gradients(&x, STEP, 20, |g, v| {
            let y = g.upsample_nearest2(v[0])?;
            readout(g, y, cfg as u64)
        })
        .unwrap();
        assert_ok("upsample_nearest2", cfg, &probes);
        let probes = check_gradients(&x, STEP, 20, |g, v| {
            let y = g.global_avg_pool(v[0])?;
            readout(g, y, cfg as u64)
        })
        .unwrap();
        assert_ok("global_avg_pool", cfg, &probes);
    }
}

#[test]
fn relu_gradient_away_from_the_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for cfg in 0..CONFIGS {
        let n = rng.random_range(1..30);
        let data = (0..n)
            .map(|_| {
                let m: f64 = rng.random_range(0.05..1.0);
                if rng.random_bool(0.5) { m } else { -m }
            })
            .collect();
        let x = vec![Tensor::from_vec(vec![n], data).unwrap()];
        let probes = check_gradients(&x, STEP, 20, |g, v| {
            let y = g.relu(v[0]);
            readout(g, y, cfg as u64)
        })
        .unwrap();
        assert_ok("relu", cfg, &probes);
    }
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for cfg in 0..CONFIGS {
        let (n, fin, fout) = (rng.random_range(1..5), rng.random_range(1..7), rng.random_range(1..5));
        let inputs = vec![
            rand_tensor(&mut rng, vec![n, fin]),
            rand_tensor(&mut rng, vec![fout, fin]),
            rand_tensor(&mut rng, vec![fout]),
        ];
        let probes = check_gradients(&inputs, STEP, 20, |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            readout(g, y, cfg as u64)
        })
        .unwrap();
        assert_ok("linear", cfg, &probes);
    }
}

#[test]
fn cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for cfg in 0..CONFIGS {
        let (n, k) = (rng.random_range(1..6), rng.random_range(2..5));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let mut z = rand_tensor(&mut rng, vec![n, k]);
        z.data_mut().iter_mut().for_each(|v| *v *= 3.0);
        let probes = check_gradients(&[z], STEP, 20, |g, v| g.softmax_cross_entropy(v[0], &labels)).unwrap();
        assert_ok("softmax_cross_entropy", cfg, &probes);
    }
}

#[test]
fn channel_statistics_and_affine_normalize_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for cfg in 0..CONFIGS {
        let (n, c) = (rng.random_range(1..3), rng.random_range(1..4));
        let (h, w) = (rng.random_range(2..6), rng.random_range(2..6));
        let x = rand_tensor(&mut rng, vec![n, c, h, w]);
        let eps = [0.0, 1e-5, 0.1][cfg % 3];
        let probes = check_gradients(std::slice::from_ref(&x), STEP, 20, |g, v| {
            let m = g.channel_mean(v[0])?;
            readout(g, m, cfg as u64)
        })
        .unwrap();
        assert_ok("channel_mean", cfg, &probes);
        let probes = check_gradients(std::slice::from_ref(&x), STEP, 20, |g, v| {
            let s = g.channel_std(v[0], eps)?;
            readout(g, s, cfg as u64)
        })
        .unwrap();
        assert_ok("channel_std", cfg, &probes);

        // all five operands as free inputs; std kept away from zero
        let mut std = rand_tensor(&mut rng, vec![n, c]);
        std.data_mut().iter_mut().for_each(|v| *v = 0.5 + v.abs());
        let inputs = vec![
            x,
            rand_tensor(&mut rng, vec![n, c]),
            std,
            rand_tensor(&mut rng, vec![n, c]),
            rand_tensor(&mut rng, vec![n, c]),
        ];
        let probes = check_gradients(&inputs, STEP, 20, |g, v| {
            let y = g.affine_normalize(v[0], v[1], v[2], v[3], v[4])?;
            readout(g, y, cfg as u64)
        })
        .unwrap();
        assert_ok("affine_normalize", cfg, &probes);
    }
}

#[test]
fn norm_and_elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for cfg in 0..CONFIGS {
        let (r, k) = (rng.random_range(1..4), rng.random_range(1..6));
        let inputs = vec![rand_tensor(&mut rng, vec![r, k]), rand_tensor(&mut rng, vec![r, k])];
        let probes = check_gradients(&inputs, STEP, 20, |g, v| {
            let d = g.sub(v[0], v[1])?;
            Ok(g.l2_norm(d))
        })
        .unwrap();
        assert_ok("l2_norm", cfg, &probes);
        let probes = check_gradients(&inputs, STEP, 20, |g, v| {
            let a = g.add(v[0], v[1])?;
            let n = g.row_l2_norm(a)?;
            let s = g.scale(n, 0.7);
            Ok(g.sum(s))
        })
        .unwrap();
        assert_ok("row_l2_norm", cfg, &probes);
        let probes = check_gradients(&inputs, STEP, 20, |g, v| {
            let m = g.mul(v[0], v[1])?;
            readout(g, m, cfg as u64)
        })
        .unwrap();
        assert_ok("mul", cfg, &probes);
        let probes = check_gradients(&inputs, STEP, 20, |g, v| g.mse(v[0], v[1])).unwrap();
        assert_ok("mse", cfg, &probes);
        let probes = check_gradients(&inputs, STEP, 20, |g, v| {
            let s = g.square(v[0]);
            readout(g, s, cfg as u64)
        })
        .unwrap();
        assert_ok("square", cfg, &probes);
    }
}

#[test]
fn composite_network_gradients() {
    // conv → pool → conv(reflect) → upsample → gap → linear → cross-entropy,
    // with smooth (relu-free) links so no kink sits near a probe
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for cfg in 0..CONFIGS {
        let inputs = vec![
            rand_tensor(&mut rng, vec![2, 1, 6, 6]),
            rand_tensor(&mut rng, vec![3, 1, 3, 3]),
            rand_tensor(&mut rng, vec![3]),
            rand_tensor(&mut rng, vec![2, 3, 3, 3]),
            rand_tensor(&mut rng, vec![2]),
            rand_tensor(&mut rng, vec![2, 2]),
            rand_tensor(&mut rng, vec![2]),
        ];
        let probes = check_gradients(&inputs, STEP, 20, |g, v| {
            let a = g.conv2d(v[0], v[1], v[2], Padding::Zero)?;
            let p = g.avg_pool2(a)?;
            let b = g.conv2d(p, v[3], v[4], Padding::Reflect)?;
            let u = g.upsample_nearest2(b)?;
            let m = g.global_avg_pool(u)?;
            let z = g.linear(m, v[5], v[6])?;
            g.softmax_cross_entropy(z, &[cfg % 2, 1])
        })
        .unwrap();
        assert_ok("composite", cfg, &probes);
    }
}
