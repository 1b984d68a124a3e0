//! Finite-difference checks for every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seaice_nn::gradcheck::check;
use seaice_nn::{Graph, Tensor};

const H: f32 = 1e-3;
const TOL: f64 = 1e-3;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero by more than 10·h.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05f32..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn conv2d_3x3_and_1x1() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in [3usize, 1] {
        let x = rand_tensor(&mut rng, &[1, 2, 5, 5], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[3, 2, k, k], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[3], -1.0, 1.0);
        let r = check(&[x, w, b], H, 7, |g, v| g.conv2d(v[0], v[1], Some(v[2]), k / 2)).unwrap();
        assert!(r.max_rel_error < TOL, "k={k}: {r:?}");
    }
}

#[test]
fn conv_transpose2() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[2, 3, 3, 2], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[3, 2, 2, 2], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[2], -1.0, 1.0);
    let r = check(&[x, w, b], H, 3, |g, v| g.conv_transpose2(v[0], v[1], Some(v[2]))).unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn batchnorm_train_and_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[2, 3, 4, 4], -2.0, 2.0);
    let gamma = rand_tensor(&mut rng, &[3], 0.5, 1.5);
    let beta = rand_tensor(&mut rng, &[3], -0.5, 0.5);
    let r = check(&[x.clone(), gamma.clone(), beta.clone()], H, 4, |g, v| {
        g.batchnorm_train(v[0], v[1], v[2], 1e-5).map(|(y, _)| y)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "train: {r:?}");

    let r = check(&[x, gamma, beta], H, 5, |g, v| {
        g.batchnorm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[1.5, 0.7, 2.0], 1e-5)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "eval: {r:?}");
}

#[test]
fn relu_away_from_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = off_kink(&mut rng, &[2, 2, 3, 3]);
    let r = check(&[x], H, 1, |g, v| Ok(g.relu(v[0]))).unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn maxpool_with_distinct_window_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 2 * 2 * 4 * 6;
    // A shuffled ramp keeps every pair of values 0.05 apart.
    let mut vals: Vec<f32> = (0..n).map(|i| i as f32 * 0.05).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let x = Tensor::new(&[2, 2, 4, 6], vals).unwrap();
    let r = check(&[x], H, 2, |g, v| g.maxpool2(v[0])).unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn upsample_concat_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[2, 2, 3, 4], -1.0, 1.0);
    let r = check(&[x], H, 3, |g, v| g.upsample2(v[0])).unwrap();
    assert!(r.max_rel_error < TOL, "upsample: {r:?}");

    let a = rand_tensor(&mut rng, &[2, 1, 3, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
    let r = check(&[a, b], H, 4, |g, v| {
        let c = g.concat_channels(&[v[0], v[1]])?;
        g.slice_channels(c, 1, 2)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "concat/slice: {r:?}");
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_tensor(&mut rng, &[1, 2, 3, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[1, 2, 3, 3], -1.0, 1.0);
    let c = rand_tensor(&mut rng, &[1, 2, 3, 3], -2.0, 2.0);
    let r = check(&[a, b], H, 5, |g, v| {
        let s = g.add(v[0], v[1])?;
        let s = g.affine(s, 1.7, -0.3);
        g.mul_const(s, &c)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");

    // clamp bounds sit well away from the sampled values' boundaries
    let x = Tensor::new(&[4], vec![-0.8, -0.2, 0.3, 0.9]).unwrap();
    let r = check(&[x], H, 6, |g, v| Ok(g.clamp(v[0], -0.5, 0.5))).unwrap();
    assert!(r.max_rel_error < TOL, "clamp: {r:?}");
}

#[test]
fn masked_l1_and_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let target = rand_tensor(&mut rng, &[1, 1, 4, 4], -1.0, 1.0);
    let offset = off_kink(&mut rng, &[1, 1, 4, 4]);
    let pred = Tensor::new(
        &[1, 1, 4, 4],
        target.data().iter().zip(offset.data()).map(|(a, b)| a + b).collect(),
    )
    .unwrap();
    let mask: Vec<bool> = (0..16).map(|i| i % 3 != 0).collect();
    let r = check(&[pred.clone()], H, 7, |g, v| {
        let l1 = g.masked_l1(v[0], &target, &mask)?;
        let l2 = g.masked_l1(v[0], &target, &vec![true; 16])?;
        g.mean(&[l1, l2])
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn composed_chain_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[2, 2, 4, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let gamma = rand_tensor(&mut rng, &[3], 0.5, 1.5);
    let beta = rand_tensor(&mut rng, &[3], -0.5, 0.5);
    let r = check(&[x, w, gamma, beta], H, 8, |g, v| {
        let y = g.conv2d(v[0], v[1], None, 1)?;
        let y = g.upsample2(y)?;
        g.batchnorm_train(y, v[2], v[3], 1e-5).map(|(y, _)| y)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn forward_is_bit_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = rand_tensor(&mut rng, &[3, 4, 8, 8], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[5, 4, 3, 3], -1.0, 1.0);
    let run = || {
        let mut g = Graph::new();
        let xv = g.variable(x.clone());
        let wv = g.variable(w.clone());
        let y = g.conv2d(xv, wv, None, 1).unwrap();
        let l = g.weighted_sum(y, &vec![0.5; 3 * 5 * 64]).unwrap();
        let grads = g.backward(l).unwrap();
        (g.value(y).clone(), grads.get(wv).unwrap().to_vec())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}
