//! Analytic gradients against central finite differences.

mod common;

use common::{assert_layer, check_loss, coords, random_tensor, rel_err, COORDS, DROPOUT_SEED, STEP, TOLERANCE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thermal_face::model::build_small_cnn;
use thermal_face::nn::{
    sigmoid_bce, softmax_cross_entropy, Activation, BatchNorm, Bottleneck, Conv2d, Dense, Dropout,
    Flatten, ForwardContext, GlobalAvgPool, Layer, MaxPool, Padding, Relu,
};

#[test]
fn conv2d() {
    let cases = [
        (3, 4, 3, 1, Padding::Same, [2, 3, 7, 7]),
        (2, 3, 3, 2, Padding::Valid, [2, 2, 9, 8]),
        (3, 5, 7, 2, Padding::Explicit(3), [1, 3, 10, 10]),
        (4, 6, 1, 2, Padding::Valid, [2, 4, 6, 6]),
        (4, 6, 1, 1, Padding::Valid, [2, 4, 5, 5]),
    ];
    for (i, (cin, f, k, s, pad, shape)) in cases.into_iter().enumerate() {
        let conv = Conv2d::new("conv", cin, f, k, s, pad, true).unwrap();
        assert_layer(&format!("conv2d case {i}"), Layer::Conv2d(conv), &shape, 10 + i as u64);
    }
    let nobias = Conv2d::new("conv", 2, 3, 3, 1, Padding::Same, false).unwrap();
    assert_layer("conv2d without bias", Layer::Conv2d(nobias), &[2, 2, 5, 5], 20);
}

#[test]
fn dense() {
    let relu = Dense::new("dense", 12, 7, Activation::Relu).unwrap();
    assert_layer("dense relu", Layer::Dense(relu), &[4, 12], 1);
    let linear = Dense::new("dense_1", 9, 3, Activation::Linear).unwrap();
    assert_layer("dense linear", Layer::Dense(linear), &[5, 9], 2);
}

#[test]
fn relu() {
    assert_layer("relu", Layer::Relu(Relu::new("relu")), &[2, 3, 4, 4], 3);
}

#[test]
fn maxpool_routing() {
    assert_layer("maxpool 2x2", Layer::MaxPool(MaxPool::halving("pool")), &[2, 3, 8, 6], 4);
    let stem = MaxPool::new("pool", 3, 2, 1).unwrap();
    assert_layer("maxpool 3x3/2 pad 1", Layer::MaxPool(stem), &[2, 2, 9, 9], 5);
}

#[test]
fn batchnorm() {
    let spatial = BatchNorm::new("bn", 3).unwrap();
    assert_layer("batchnorm 4d", Layer::BatchNorm(spatial), &[3, 3, 4, 4], 6);
    let flat = BatchNorm::new("bn", 5).unwrap();
    assert_layer("batchnorm 2d", Layer::BatchNorm(flat), &[6, 5], 7);
}

#[test]
fn dropout_fixed_mask() {
    let d = Dropout::new("dropout", 0.5).unwrap();
    assert_layer("dropout", Layer::Dropout(d), &[4, 40], 8);
}

#[test]
fn residual_block() {
    let projected = Bottleneck::new("block", 3, 2, 6, 2, true).unwrap();
    assert_layer("bottleneck with projection", Layer::Residual(Box::new(projected)), &[2, 3, 6, 6], 9);
    let identity = Bottleneck::new("block", 4, 2, 4, 1, false).unwrap();
    assert_layer("bottleneck identity", Layer::Residual(Box::new(identity.clone())), &[3, 4, 4, 4], 10);

    // batch normalization cancels any per-channel shift, so biases feeding
    // it receive exactly zero gradient up to rounding
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut layer = Layer::Residual(Box::new(identity));
    layer.initialize(&mut rng);
    let x = random_tensor(&[3, 4, 4, 4], &mut rng);
    let mut ctx = ForwardContext::train(0);
    let y = layer.forward(&x, &mut ctx).unwrap();
    let grads = layer.backward(&mut ctx, &random_tensor(y.shape(), &mut rng)).unwrap();
    for (p, g) in layer.params().iter().zip(&grads.params) {
        if p.name.ends_with("/bias") && p.name.contains("/conv") {
            assert!(g.data().iter().all(|v| v.abs() < 1e-12), "{}", p.name);
        }
    }
}

#[test]
fn reshaping_layers() {
    assert_layer("flatten", Layer::Flatten(Flatten::new("flatten")), &[2, 3, 2, 2], 11);
    assert_layer("global average pool", Layer::GlobalAvgPool(GlobalAvgPool::new("gap")), &[2, 3, 3, 3], 12);
}

#[test]
fn softmax_cross_entropy_loss() {
    let labels = [0, 3, 1, 2, 2, 0, 1, 3];
    let (worst, n) = check_loss(
        &[8, 4],
        &labels,
        |z, l| softmax_cross_entropy(z, l).unwrap().loss,
        |z, l| softmax_cross_entropy(z, l).unwrap().grad,
    );
    println!("softmax cross-entropy: {n} coordinates, worst relative error {worst:.3e}");
    assert!(n >= COORDS && worst <= TOLERANCE);
}

#[test]
fn sigmoid_bce_loss() {
    let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
    let (worst, n) = check_loss(
        &[40, 1],
        &labels,
        |z, l| sigmoid_bce(z, l).unwrap().loss,
        |z, l| sigmoid_bce(z, l).unwrap().grad,
    );
    println!("sigmoid binary cross-entropy: {n} coordinates, worst relative error {worst:.3e}");
    assert!(n >= COORDS && worst <= TOLERANCE);
}

#[test]
fn whole_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut model = build_small_cnn(8, 1, 3, 0.5).unwrap();
    model.initialize(14);
    let x = random_tensor(&[4, 1, 8, 8], &mut rng);
    let labels = [0, 1, 2, 1];
    let loss_at = |m: &thermal_face::model::Model| {
        let mut m = m.clone();
        let y = m.forward(&x, &mut ForwardContext::train(DROPOUT_SEED)).unwrap();
        softmax_cross_entropy(&y, &labels).unwrap().loss
    };
    let mut probe = model.clone();
    let mut ctx = ForwardContext::train(DROPOUT_SEED);
    let y = probe.forward(&x, &mut ctx).unwrap();
    let out = softmax_cross_entropy(&y, &labels).unwrap();
    let (_, grads) = probe.backward(&mut ctx, &out.grad).unwrap();
    let mut worst: f64 = 0.0;
    let n = model.params().len();
    for pi in 0..n {
        let len = model.params()[pi].value.len();
        for i in coords(len, &mut rng) {
            let mut plus = model.clone();
            plus.params_mut()[pi].value.data_mut()[i] += STEP;
            let mut minus = model.clone();
            minus.params_mut()[pi].value.data_mut()[i] -= STEP;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(grads[pi].data()[i], numeric));
        }
    }
    println!("small cnn end to end: worst relative error {worst:.3e}");
    assert!(worst <= TOLERANCE);
}
