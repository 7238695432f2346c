use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use starv2x_autodiff::checkpoint;
use starv2x_autodiff::gradcheck::layer_suite;
use starv2x_autodiff::qnet::{NetworkSpec, QNetwork, TokenGroup, Variant};
use starv2x_autodiff::tensor::Tensor;

fn spec(variant: Variant) -> NetworkSpec {
    NetworkSpec {
        variant,
        input_len: 10,
        tokens: vec![
            TokenGroup { count: 2, width: 3 },
            TokenGroup { count: 1, width: 4 },
        ],
        model_dim: 8,
        res_blocks: 1,
        heads: 2,
        fusion: vec![12],
        head_sizes: vec![3, 2, 4],
    }
}

#[test]
fn every_layer_passes_gradcheck_on_a_few_seeds() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for r in layer_suite(&mut rng).unwrap() {
            assert!(
                r.max_rel_err <= 1e-4,
                "{} seed {seed}: {:.3e} at {}",
                r.name,
                r.max_rel_err,
                r.worst_param
            );
        }
    }
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    for variant in [Variant::Attention, Variant::Vanilla] {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (net, ps) = QNetwork::new(spec(variant), &mut rng).unwrap();
        let mut buf = Vec::new();
        checkpoint::save(&mut buf, net.spec(), &ps).unwrap();
        let (spec2, ps2) = checkpoint::load(&mut buf.as_slice()).unwrap();
        assert_eq!(&spec2, net.spec());
        let x =
            Tensor::from_rows(2, 10, (0..20).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
        let a = net.forward(&ps, &x).unwrap();
        let b = net.forward(&ps2, &x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cols(), 9);
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (net, ps) = QNetwork::new(spec(Variant::Vanilla), &mut rng).unwrap();
    let mut bytes = checkpoint::encode(net.spec(), &ps);
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(checkpoint::decode(&bytes).is_err());
}
