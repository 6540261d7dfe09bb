use tfponet::neural::{NetSpec, Network};

/// Output of the seeded 4×64 network captured at the first build.
const GOLDEN: [f64; 8] = [
    8.379_740_228_754_13e-2,
    1.219_421_574_352_797_5e-1,
    -7.935_663_200_957_233e-2,
    -3.288_831_618_800_220_5e-2,
    -8.330_813_374_539_606e-2,
    -1.914_140_127_874_517_5e-2,
    -5.267_848_108_243_678_6e-2,
    1.518_983_446_558_503_4e-1,
];

fn golden_input() -> Vec<f64> {
    (0..32).map(|i| (0.37 * i as f64).sin()).collect()
}

#[test]
fn seeded_mlp_matches_golden_output() {
    let net = Network::new(NetSpec::mlp(32, 8), 42).unwrap();
    let y = net.predict(&golden_input(), 1).unwrap();
    for (a, b) in y.iter().zip(GOLDEN) {
        assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn seeded_mlp_is_bit_stable() {
    let x = golden_input();
    let a = Network::new(NetSpec::mlp(32, 8), 42).unwrap().predict(&x, 1).unwrap();
    let b = Network::new(NetSpec::mlp(32, 8), 42).unwrap().predict(&x, 1).unwrap();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn predictions_are_per_sample() {
    let net = Network::new(NetSpec::mlp(32, 8), 42).unwrap();
    let x = golden_input();
    let twice: Vec<f64> = x.iter().chain(&x).copied().collect();
    let y = net.predict(&twice, 2).unwrap();
    assert_eq!(&y[..8], &y[8..]);
    assert!(net.predict(&x[..31], 1).is_err());
}
