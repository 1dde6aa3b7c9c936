use vmr_policy::checkpoint::{from_bytes, to_bytes};
use vmr_policy::{load_checkpoint, save_checkpoint, NetConfig, NormStats, PolicyError, PolicyNet};

fn net() -> PolicyNet<f32> {
    let mut n = PolicyNet::new(NetConfig::default(), NormStats::from_capacity(32, 64, 16), 11);
    n.randomize(11, 1.0);
    n
}

#[test]
fn round_trip_is_bit_exact() {
    let n = net();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.vmrp");
    save_checkpoint(&n, &path).unwrap();
    let back: PolicyNet<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(back.config(), n.config());
    assert_eq!(back.norm, n.norm);
    assert_eq!(back.params.names, n.params.names);
    for (a, b) in back.params.values.iter().zip(&n.params.values) {
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(to_bytes(&back).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn default_checkpoint_is_under_two_megabytes() {
    let bytes = to_bytes(&net()).unwrap();
    assert!(bytes.len() < 2 * 1024 * 1024, "{} bytes", bytes.len());
}

#[test]
fn corrupt_input_is_rejected() {
    let mut bytes = to_bytes(&net()).unwrap();
    assert!(matches!(from_bytes::<f32>(&bytes[..bytes.len() - 1]), Err(PolicyError::Checkpoint(_))));
    assert!(matches!(from_bytes::<f32>(&bytes[..6]), Err(PolicyError::Checkpoint(_))));
    bytes[0] = b'X';
    assert!(matches!(from_bytes::<f32>(&bytes), Err(PolicyError::Checkpoint(_))));
}

#[test]
fn loads_across_precisions() {
    let n = net();
    let wide: PolicyNet<f64> = from_bytes(&to_bytes(&n).unwrap()).unwrap();
    for (a, b) in wide.params.values.iter().zip(&n.params.values) {
        assert!(a.iter().zip(b).all(|(x, y)| *x == *y as f64));
    }
    let narrow: PolicyNet<f32> = from_bytes(&to_bytes(&wide).unwrap()).unwrap();
    assert_eq!(narrow.params.values, n.params.values);
}
