use gtcnn_core::model::{GateKind, GtcnnConfig, GtcnnModel};
use gtcnn_core::train::{add_awgn, log_path, stream_rng, train, TrainConfig, STREAM_INIT};
use gtcnn_core::{synth, weights, Error, Shape, Tape, Tensor4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> GtcnnConfig {
    GtcnnConfig {
        c_in: 1,
        channels: 16,
        depth: 1,
        stages: 2,
        gate: GateKind::ChannelSoftmax,
        use_1x1: false,
    }
}

fn fresh(config: GtcnnConfig, seed: u64) -> GtcnnModel<f32> {
    GtcnnModel::new(config, &mut stream_rng(seed, STREAM_INIT)).unwrap()
}

#[test]
fn awgn_statistics() {
    let y = Tensor4::<f64>::full(Shape::new(1, 1, 1000, 1000), 0.5);
    let x = add_awgn(&y, 50.0, &mut ChaCha8Rng::seed_from_u64(77));
    let n: Vec<f64> = x.data().iter().map(|v| v - 0.5).collect();
    let count = n.len() as f64;
    let mean = n.iter().sum::<f64>() / count;
    let std = (n.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count).sqrt();
    let target = 50.0 / 255.0;
    assert!((std - target).abs() <= 0.01 * target, "std {std}");
    assert!(mean.abs() <= 3.0 * target / count.sqrt(), "mean {mean}");
    assert!(
        x.data().iter().any(|&v| !(0.0..=1.0).contains(&v)),
        "noise must not be clamped"
    );
}

#[test]
fn mse_matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = Tensor4::<f32>::uniform(Shape::new(2, 3, 5, 4), 0.0, 1.0, &mut rng);
    let b = Tensor4::<f32>::uniform(Shape::new(2, 3, 5, 4), 0.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let loss = tape.mse_loss(va, vb).unwrap();
    let got = tape.value(loss).data()[0] as f64;
    let diffs: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x as f64 - y as f64)
        .collect();
    let oracle = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
    assert!((got - oracle).abs() <= 1e-7);

    let same = tape.mse_loss(va, va).unwrap();
    assert_eq!(tape.value(same).data()[0], 0.0);
    let shifted = tape.constant(a.map(|v| v + 0.1));
    let l = tape.mse_loss(shifted, va).unwrap();
    assert!((tape.value(l).data()[0] - 0.01).abs() < 1e-6);
}

#[test]
fn memorizes_a_single_patch() {
    let mut model = fresh(small_config(), 1);
    let patch = synth::scene(48, 48, 1, &mut ChaCha8Rng::seed_from_u64(2));
    let config = TrainConfig {
        sigma: 25.0,
        batch: 1,
        steps: 200,
        seed: 3,
        ..TrainConfig::default()
    };
    let log = train(&mut model, &[patch], &[], &config).unwrap();
    assert_eq!(log.steps.len(), 200);
    let first = log.steps[0].loss;
    let last = log.steps[199].loss;
    assert!(last <= 0.5 * first, "first {first} last {last}");
    assert!(model.has_running_stats());
}

#[test]
fn same_seed_same_losses() {
    let images: Vec<_> = (0..2)
        .map(|i| synth::scene(64, 64, 1, &mut ChaCha8Rng::seed_from_u64(i)))
        .collect();
    let config = TrainConfig {
        patch: 32,
        stride: 32,
        batch: 3,
        steps: 8,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = fresh(small_config(), 4);
        let log = train(&mut m, &images, &[], &config).unwrap();
        (log, weights::to_bytes(&m))
    };
    let (a, wa) = run();
    let (b, wb) = run();
    assert_eq!(a.losses(), b.losses());
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(wa, wb);
    let lrs: Vec<f64> = a.steps.iter().map(|s| s.lr).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(lrs[0], config.lr0);
}

#[test]
fn validation_errors() {
    let img = synth::scene(48, 48, 1, &mut ChaCha8Rng::seed_from_u64(0));
    let mut m = fresh(small_config(), 0);
    let zero_steps = TrainConfig {
        steps: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&mut m, std::slice::from_ref(&img), &[], &zero_steps),
        Err(Error::InvalidConfig(_))
    ));
    let tiny_patch = TrainConfig {
        patch: 2,
        ..TrainConfig::default()
    };
    assert!(train(&mut m, std::slice::from_ref(&img), &[], &tiny_patch).is_err());
    assert!(train(&mut m, &[], &[], &TrainConfig::default()).is_err());
    let small = synth::scene(20, 20, 1, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(train(&mut m, &[small], &[], &TrainConfig::default()).is_err());
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let mut img = synth::scene(48, 48, 1, &mut ChaCha8Rng::seed_from_u64(0));
    img.data_mut()[7] = f32::NAN;
    let mut m = fresh(small_config(), 0);
    let config = TrainConfig {
        steps: 5,
        batch: 1,
        ..TrainConfig::default()
    };
    match train(&mut m, &[img], &[], &config) {
        Err(Error::NonFiniteLoss { step, lr }) => {
            assert_eq!(step, 1);
            assert_eq!(lr, config.lr0);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn checkpoints_and_log_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.gtcw");
    let img = synth::scene(48, 48, 1, &mut ChaCha8Rng::seed_from_u64(0));
    let holdout = synth::scene(32, 32, 1, &mut ChaCha8Rng::seed_from_u64(1));
    let mut m = fresh(small_config(), 0);
    let config = TrainConfig {
        steps: 4,
        batch: 1,
        checkpoint_every: 2,
        checkpoint_path: Some(path.clone()),
        ..TrainConfig::default()
    };
    let log = train(&mut m, &[img], &[holdout], &config).unwrap();
    assert_eq!(log.evals.iter().map(|e| e.step).collect::<Vec<_>>(), [2, 4]);
    let loaded = weights::load(&path).unwrap();
    assert_eq!(loaded.params(), m.params());
    let csv = std::fs::read_to_string(log_path(&path)).unwrap();
    assert!(csv.starts_with("step,loss,lr\n"));
    assert_eq!(csv.lines().count(), 5);
}
