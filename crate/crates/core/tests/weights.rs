use gtcnn_core::model::{Eager, GateKind, Graph, GtcnnConfig, GtcnnModel, Mode};
use gtcnn_core::{weights, Error, Shape, Tensor4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trained_like(config: GtcnnConfig) -> GtcnnModel<f32> {
    let mut m = GtcnnModel::new(config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let x = Tensor4::<f32>::uniform(
        Shape::new(2, config.c_in, 8, 8),
        0.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(2),
    );
    let mut g = Eager;
    let p = m.bind(&mut g, false);
    let xi = g.input(x, false);
    let stats = m
        .forward(&mut g, &p, &xi, Mode::Train, None, false)
        .unwrap()
        .batch_stats;
    drop(p);
    m.commit_batch_stats(&stats);
    m.commit_batch_stats(&stats);
    m
}

fn small() -> GtcnnConfig {
    GtcnnConfig {
        c_in: 1,
        channels: 4,
        depth: 2,
        stages: 2,
        gate: GateKind::Sigmoid,
        use_1x1: true,
    }
}

#[test]
fn roundtrip_is_bit_exact() {
    let m = trained_like(small());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.gtcw");
    weights::save(&m, &path).unwrap();
    let back = weights::load(&path).unwrap();
    assert_eq!(back.config(), m.config());
    assert_eq!(back.params(), m.params());
    assert_eq!(back.bn_states(), m.bn_states());
    assert_eq!(weights::to_bytes(&back), std::fs::read(&path).unwrap());

    let x = Tensor4::<f32>::uniform(Shape::new(1, 1, 11, 9), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
    let a = m.denoise(&x, None).unwrap();
    let b = back.denoise(&x, None).unwrap();
    assert_eq!(a.restored, b.restored);
}

#[test]
fn header_layout() {
    let bytes = weights::to_bytes(&trained_like(small()));
    assert_eq!(&bytes[..4], b"GTCW");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    // c_in, channels (u16), depth, stages, gate, use_1x1
    assert_eq!(&bytes[8..15], &[1, 4, 0, 2, 2, 1, 1]);
    let first_len = u16::from_le_bytes(bytes[19..21].try_into().unwrap()) as usize;
    assert_eq!(&bytes[21..21 + first_len], b"input.weight");
}

#[test]
fn flipped_magic_rejected() {
    let mut bytes = weights::to_bytes(&trained_like(small()));
    bytes[0] ^= 0x20;
    let err = weights::from_bytes(&bytes).unwrap_err();
    assert!(err.to_string().contains("magic"), "{err}");
}

#[test]
fn bad_version_rejected() {
    let mut bytes = weights::to_bytes(&trained_like(small()));
    bytes[4] = 2;
    assert!(weights::from_bytes(&bytes).unwrap_err().to_string().contains("version"));
}

#[test]
fn truncation_names_the_tensor() {
    let m = trained_like(small());
    let bytes = weights::to_bytes(&m);
    // Cut inside the values of the third tensor (layers.0.cbr.conv.weight).
    let needle = b"layers.0.cbr.conv.weight";
    let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
    let cut = at + needle.len() + 2 + 16 + 40;
    let err = weights::from_bytes(&bytes[..cut]).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Weights(_)));
    assert!(
        msg.contains("layers.0.cbr.conv.weight") && msg.contains("truncated"),
        "{msg}"
    );
    for len in [0, 3, 10, 18, bytes.len() - 1] {
        assert!(weights::from_bytes(&bytes[..len]).is_err(), "len {len}");
    }
}

#[test]
fn shape_and_name_mismatches_rejected() {
    let m = trained_like(small());
    let mut bytes = weights::to_bytes(&m);
    // Claim 5 feature channels: every tensor after the header disagrees.
    bytes[9] = 5;
    let msg = weights::from_bytes(&bytes).unwrap_err().to_string();
    assert!(msg.contains("input.weight") && msg.contains("shape"), "{msg}");

    let mut bytes = weights::to_bytes(&m);
    bytes[21] = b'X';
    let msg = weights::from_bytes(&bytes).unwrap_err().to_string();
    assert!(msg.contains("expected tensor input.weight"), "{msg}");

    let mut bytes = weights::to_bytes(&m);
    bytes.push(0);
    assert!(weights::from_bytes(&bytes)
        .unwrap_err()
        .to_string()
        .contains("trailing"));
}

#[test]
fn save_does_not_leave_partial_files() {
    let m = trained_like(small());
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no/such/dir/m.gtcw");
    assert!(weights::save(&m, &missing).is_err());
    assert!(weights::load(&missing).is_err());
}
