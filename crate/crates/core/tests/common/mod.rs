//! Finite-difference gradient checking shared by the test targets.

#![allow(dead_code)]

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermal_face::nn::{ForwardContext, Layer};
use thermal_face::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const COORDS: usize = 32;
pub const DROPOUT_SEED: u64 = 99;

/// Gradients smaller than this are below what a central difference with
/// `STEP` can resolve on O(10) objectives (roundoff ≈ ε·|f|/STEP ≈ 1e-10).
const FLOOR: f64 = 1e-5;

/// |a − n| / max(|a|, |n|, FLOOR)
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Up to `COORDS` distinct indices; every index when there are fewer.
pub fn coords(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= COORDS {
        (0..len).collect()
    } else {
        sample(rng, len, COORDS).into_vec()
    }
}

/// `Σ w·layer(x)` in training mode with a fixed dropout stream.
pub fn objective(layer: &Layer, x: &Tensor, w: &Tensor) -> f64 {
    let mut l = layer.clone();
    let y = l.forward(x, &mut ForwardContext::train(DROPOUT_SEED)).unwrap();
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Returns the worst relative error over sampled input and parameter
/// coordinates, and how many coordinates were checked.
pub fn check_layer(mut layer: Layer, input_shape: &[usize], seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    layer.initialize(&mut rng);
    for p in layer.params_mut() {
        if p.trainable {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
    }
    let x = random_tensor(input_shape, &mut rng);
    let mut probe = layer.clone();
    let mut ctx = ForwardContext::train(DROPOUT_SEED);
    let y = probe.forward(&x, &mut ctx).unwrap();
    let w = random_tensor(y.shape(), &mut rng);
    let grads = probe.backward(&mut ctx, &w).unwrap();
    assert_eq!(ctx.tape_len(), 0, "backward must consume the tape");

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in coords(x.len(), &mut rng) {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[i] += STEP;
        xm.data_mut()[i] -= STEP;
        let numeric = (objective(&layer, &xp, &w) - objective(&layer, &xm, &w)) / (2.0 * STEP);
        worst = worst.max(rel_err(grads.input.data()[i], numeric));
        checked += 1;
    }
    let params = layer.params();
    for (pi, p) in params.iter().enumerate() {
        if !p.trainable {
            continue;
        }
        for i in coords(p.value.len(), &mut rng) {
            let eval = |delta: f64| {
                let mut l = layer.clone();
                l.params_mut()[pi].value.data_mut()[i] += delta;
                objective(&l, &x, &w)
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            worst = worst.max(rel_err(grads.params[pi].data()[i], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

pub fn assert_layer(name: &str, layer: Layer, input_shape: &[usize], seed: u64) {
    let (worst, checked) = check_layer(layer, input_shape, seed);
    println!("{name}: {checked} coordinates, worst relative error {worst:.3e}");
    assert!(checked >= COORDS.min(input_shape.iter().product()));
    assert!(worst <= TOLERANCE, "{name}: relative error {worst:.3e}");
}

pub fn check_loss(shape: &[usize], labels: &[usize], f: fn(&Tensor, &[usize]) -> f64, g: fn(&Tensor, &[usize]) -> Tensor) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z = random_tensor(shape, &mut rng).map(|v| 3.0 * v);
    let grad = g(&z, labels);
    let mut worst: f64 = 0.0;
    for i in 0..z.len() {
        let (mut zp, mut zm) = (z.clone(), z.clone());
        zp.data_mut()[i] += STEP;
        zm.data_mut()[i] -= STEP;
        let numeric = (f(&zp, labels) - f(&zm, labels)) / (2.0 * STEP);
        worst = worst.max(rel_err(grad.data()[i], numeric));
    }
    (worst, z.len())
}

