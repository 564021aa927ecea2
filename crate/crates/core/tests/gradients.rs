//! Finite-difference checks of every differentiable tape operation.

use gtcnn_core::{grad_check, Result, Shape, Tape, Tensor4, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values at least `gap` away from zero, with random sign.
fn away_from_zero(shape: Shape, gap: f64, seed: u64) -> Tensor4<f64> {
    let t = Tensor4::<f64>::uniform(shape, -1.0, 1.0, &mut rng(seed));
    t.map(|v| if v >= 0.0 { v + gap } else { v - gap })
}

/// Weighted sum so every output element carries a distinct sensitivity.
fn weighted(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = Tensor4::randn(tape.shape(y), 1.0, &mut rng(seed));
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn check(name: &str, inputs: &[Tensor4<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) {
    let report = grad_check(inputs, f, STEP).unwrap();
    assert!(report.max_rel_error <= TOL, "{name}: {report:?}");
}

#[test]
fn conv2d_3x3_with_bias() {
    let mut g = rng(1);
    let x = Tensor4::randn(Shape::new(1, 2, 4, 4), 1.0, &mut g);
    let w = Tensor4::randn(Shape::new(3, 2, 3, 3), 0.5, &mut g);
    let b = Tensor4::randn(Shape::new(1, 3, 1, 1), 0.5, &mut g);
    check("conv3x3", &[x, w, b], |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]))?;
        weighted(t, y, 2)
    });
}

#[test]
fn conv2d_1x1_batched() {
    let mut g = rng(3);
    let x = Tensor4::randn(Shape::new(2, 3, 3, 2), 1.0, &mut g);
    let w = Tensor4::randn(Shape::new(2, 3, 1, 1), 0.5, &mut g);
    check("conv1x1", &[x, w], |t, v| {
        let y = t.conv2d(v[0], v[1], None)?;
        weighted(t, y, 4)
    });
}

#[test]
fn batch_norm_train_mode() {
    let mut g = rng(5);
    let x = Tensor4::randn(Shape::new(3, 2, 3, 3), 1.0, &mut g);
    let gamma = Tensor4::uniform(Shape::new(1, 2, 1, 1), 0.5, 1.5, &mut g);
    let beta = Tensor4::randn(Shape::new(1, 2, 1, 1), 0.5, &mut g);
    check("bn train", &[x, gamma, beta], |t, v| {
        let (y, _) = t.batch_norm_train(v[0], v[1], v[2])?;
        weighted(t, y, 6)
    });
}

#[test]
fn batch_norm_eval_mode() {
    let mut g = rng(7);
    let x = Tensor4::randn(Shape::new(2, 2, 3, 3), 1.0, &mut g);
    let gamma = Tensor4::uniform(Shape::new(1, 2, 1, 1), 0.5, 1.5, &mut g);
    let beta = Tensor4::randn(Shape::new(1, 2, 1, 1), 0.5, &mut g);
    check("bn eval", &[x, gamma, beta], |t, v| {
        let y = t.batch_norm_eval(v[0], v[1], v[2], &[0.3, -0.2], &[1.5, 0.7])?;
        weighted(t, y, 8)
    });
}

#[test]
fn relu_away_from_kink() {
    let x = away_from_zero(Shape::new(1, 2, 3, 3), 0.05, 9);
    check("relu", &[x], |t, v| {
        let y = t.relu(v[0]);
        weighted(t, y, 10)
    });
}

#[test]
fn sigmoid_op() {
    let x = Tensor4::randn(Shape::new(1, 2, 3, 3), 2.0, &mut rng(11));
    check("sigmoid", &[x], |t, v| {
        let y = t.sigmoid(v[0]);
        weighted(t, y, 12)
    });
}

#[test]
fn softmax_channels_op() {
    let x = Tensor4::randn(Shape::new(2, 4, 2, 3), 1.5, &mut rng(13));
    check("softmax", &[x], |t, v| {
        let y = t.softmax_channels(v[0]);
        weighted(t, y, 14)
    });
}

#[test]
fn maxpool_with_distinct_window_values() {
    // A shuffled ramp keeps every window's runner-up far from its maximum.
    let mut vals: Vec<f64> = (0..36).map(|i| i as f64 * 0.1).collect();
    use rand::seq::SliceRandom;
    vals.shuffle(&mut rng(15));
    let x = Tensor4::from_vec(Shape::new(1, 1, 6, 6), vals).unwrap();
    check("maxpool", &[x], |t, v| {
        let y = t.maxpool2x2(v[0])?;
        weighted(t, y, 16)
    });
}

#[test]
fn upsample_op() {
    let x = Tensor4::randn(Shape::new(1, 2, 2, 3), 1.0, &mut rng(17));
    check("upsample", &[x], |t, v| {
        let y = t.upsample_nearest2x(v[0]);
        weighted(t, y, 18)
    });
}

#[test]
fn concat_and_slice() {
    let mut g = rng(19);
    let a = Tensor4::randn(Shape::new(1, 2, 3, 3), 1.0, &mut g);
    let b = Tensor4::randn(Shape::new(1, 3, 3, 3), 1.0, &mut g);
    check("concat", &[a.clone(), b.clone()], |t, v| {
        let y = t.concat_channels(v[0], v[1])?;
        weighted(t, y, 20)
    });
    check("slice", &[b], |t, v| {
        let y = t.slice_channels(v[0], 1, 2)?;
        weighted(t, y, 21)
    });
}

#[test]
fn pad_reflect_and_crop() {
    let x = Tensor4::randn(Shape::new(1, 2, 3, 5), 1.0, &mut rng(22));
    check("pad", std::slice::from_ref(&x), |t, v| {
        let y = t.pad_reflect(v[0], 8, 8)?;
        weighted(t, y, 23)
    });
    check("crop", &[x], |t, v| {
        let y = t.crop(v[0], 2, 3)?;
        weighted(t, y, 24)
    });
}

#[test]
fn elementwise_ops() {
    let mut g = rng(25);
    let a = Tensor4::randn(Shape::new(1, 2, 3, 3), 1.0, &mut g);
    let b = Tensor4::randn(Shape::new(1, 2, 3, 3), 1.0, &mut g);
    check("mul", &[a.clone(), b.clone()], |t, v| {
        let y = t.mul(v[0], v[1])?;
        weighted(t, y, 26)
    });
    check("sub", &[a.clone(), b.clone()], |t, v| {
        let y = t.sub(v[0], v[1])?;
        weighted(t, y, 27)
    });
    check("add_scalar", std::slice::from_ref(&a), |t, v| {
        let y = t.add_scalar(v[0], 0.3);
        weighted(t, y, 28)
    });
    check("mse", &[a, b], |t, v| t.mse_loss(v[0], v[1]));
}

#[test]
fn conv_bn_relu_composite() {
    let mut g = rng(29);
    let x = Tensor4::randn(Shape::new(2, 2, 4, 4), 1.0, &mut g);
    let w = Tensor4::randn(Shape::new(3, 2, 3, 3), 0.5, &mut g);
    let gamma = Tensor4::uniform(Shape::new(1, 3, 1, 1), 0.5, 1.5, &mut g);
    // Positive shift moves normalized values off the ReLU kink on average;
    // the check asserts the margin below.
    let beta = Tensor4::full(Shape::new(1, 3, 1, 1), 0.05);
    let f = |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
        let h = t.conv2d(v[0], v[1], None)?;
        let (h, _) = t.batch_norm_train(h, v[2], v[3])?;
        let y = t.relu(h);
        weighted(t, y, 30)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = [&x, &w, &gamma, &beta]
        .iter()
        .map(|v| tape.leaf((*v).clone()))
        .collect();
    let h = tape.conv2d(vars[0], vars[1], None).unwrap();
    let (h, _) = tape.batch_norm_train(h, vars[2], vars[3]).unwrap();
    let margin = tape
        .value(h)
        .data()
        .iter()
        .fold(f64::INFINITY, |a, v: &f64| a.min(v.abs()));
    assert!(margin > 1e-3, "kink margin {margin}");
    check("conv-bn-relu", &[x, w, gamma, beta], f);
}
