use mcsforge::nn::{Activation, Checkpoint, GruCell, Head, Mlp};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn mlp_round_trip_is_bit_exact(
        dims in prop::collection::vec(1usize..6, 2..5),
        seed in any::<u64>(),
        relu in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = if relu { Activation::Relu } else { Activation::Tanh };
        let net = Mlp::random(&dims, act, Head::Softmax, 0.5, &mut rng).unwrap();
        let mut ck = Checkpoint::new();
        ck.put_mlp("policy", &net);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap().get_mlp("policy").unwrap();
        prop_assert_eq!(back.dims(), net.dims());
        let same = back.params().iter().zip(net.params()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn gru_round_trip_is_bit_exact(input in 1usize..5, hidden in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = GruCell::random(input, hidden, &mut rng).unwrap();
        let mut ck = Checkpoint::new();
        ck.put_gru("enc", &cell);
        ck.set_meta("note", "x");
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(back.meta("note").unwrap(), "x");
        prop_assert_eq!(back.get_gru("enc").unwrap(), cell);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = Checkpoint::from_bytes(&bytes);
    }
}

#[test]
fn file_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let net = Mlp::random(&[2, 3, 1], Activation::Tanh, Head::Linear, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut ck = Checkpoint::new();
    ck.put_mlp("v", &net);
    ck.write(&path).unwrap();
    assert_eq!(Checkpoint::read(&path).unwrap().get_mlp("v").unwrap(), net);

    let mut bytes = ck.to_bytes();
    bytes.push(0);
    assert!(Checkpoint::from_bytes(&bytes).is_err());
    bytes[0] = b'X';
    assert!(Checkpoint::from_bytes(&bytes).is_err());
    assert!(Checkpoint::read(&dir.path().join("missing")).is_err());
}
