//! Property tests over the public codec surface.

use docofl_core::codec::{decode_counting, decompress, ecuq_encode, nmse};
use docofl_core::{CompressorSpec, DenseVector, EncodedBlob};
use proptest::prelude::*;

const SCHEMES: [&str; 10] = [
    "identity",
    "ecuq:3",
    "sq:2",
    "hsq:2",
    "hsq:0.5",
    "rksq:0.5:2",
    "qsgd:4",
    "randk:0.25",
    "topk:0.25",
    "noise:0.5",
];

fn spec(s: &str) -> CompressorSpec {
    s.parse().unwrap()
}

fn vector() -> impl Strategy<Value = DenseVector> {
    prop::collection::vec(-1e3f32..1e3, 1..300).prop_map(|v| DenseVector::new(v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deterministic_and_exactly_accounted(x in vector(), seed in any::<u64>(), which in 0..SCHEMES.len()) {
        let c = spec(SCHEMES[which]);
        let blob = c.compress(&x, seed).unwrap();
        prop_assert_eq!(&blob, &c.compress(&x, seed).unwrap());
        prop_assert_eq!(blob.payload.len() as u64, blob.bit_length.div_ceil(8));
        let (y, consumed) = decode_counting(&blob).unwrap();
        prop_assert_eq!(consumed, blob.bit_length);
        prop_assert_eq!(y.len(), x.len());
        let bytes = blob.to_bytes();
        let (back, used) = EncodedBlob::from_bytes(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, blob);
    }

    #[test]
    fn fixed_width_payloads(x in vector(), bits in 1u32..=8, seed in any::<u64>()) {
        let blob = spec(&format!("sq:{bits}")).compress(&x, seed).unwrap();
        prop_assert_eq!(blob.bit_length, bits as u64 * x.len() as u64);
        let n = x.len().next_power_of_two() as u64;
        let blob = spec(&format!("hsq:{bits}")).compress(&x, seed).unwrap();
        prop_assert_eq!(blob.bit_length, bits as u64 * n);
    }

    #[test]
    fn lossless_schemes_are_exact(x in vector(), seed in any::<u64>()) {
        for name in ["identity", "randk:1", "topk:1", "noise:0"] {
            prop_assert_eq!(&spec(name).roundtrip(&x, seed).unwrap(), &x);
        }
    }

    #[test]
    fn ecuq_stays_on_budget(x in vector(), bits in 1u32..=6) {
        let out = ecuq_encode(&x, bits, 0.1).unwrap();
        prop_assert!(out.entropy <= bits as f64 + 1e-9);
        prop_assert!(out.levels >= 1);
        let y = decompress(&out.blob).unwrap();
        let (lo, hi) = x.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert!(y.iter().all(|&v| v >= lo && v <= hi));
        // Deterministic: the seed plays no part.
        prop_assert_eq!(spec(&format!("ecuq:{bits}")).compress(&x, 1).unwrap(), out.blob);
    }

    #[test]
    fn quantizers_stay_in_range(x in vector(), seed in any::<u64>(), bits in 1u32..=4) {
        let y = spec(&format!("sq:{bits}")).roundtrip(&x, seed).unwrap();
        let (lo, hi) = x.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert!(y.iter().all(|&v| v >= lo && v <= hi));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Mean NMSE over repeated seeds stays under the declared ceiling.
    #[test]
    fn declared_nmse_bounds_hold(x in vector(), bits in 1u32..=4, start in any::<u32>()) {
        prop_assume!(x.norm() > 0.0);
        for name in [format!("hsq:{bits}"), format!("qsgd:{}", (1 << bits) - 1), "randk:0.25".to_string()] {
            let c = spec(&name);
            let bound = c.contract(x.len()).nmse_bound.unwrap();
            let trials = 200u64;
            let mean = (0..trials)
                .map(|t| nmse(&x, &c.roundtrip(&x, start as u64 + t).unwrap()).unwrap())
                .sum::<f64>()
                / trials as f64;
            prop_assert!(mean <= bound * 1.05 + 1e-9, "{name}: {mean} > {bound}");
        }
    }
}

#[test]
fn scalar_rounding_probability() {
    // 0.3 between grid points 0 and 1 rounds up 30% of the time.
    let x = DenseVector::new(vec![0.0, 0.3, 1.0]).unwrap();
    let n = 10_000u64;
    let ups: Vec<f64> = (0..n)
        .map(|t| spec("sq:1").roundtrip(&x, t).unwrap().as_slice()[1] as f64)
        .collect();
    assert!(ups.iter().all(|&v| v == 0.0 || v == 1.0));
    let mean = ups.iter().sum::<f64>() / n as f64;
    let se = (0.3f64 * 0.7 / n as f64).sqrt();
    assert!((mean - 0.3).abs() < 3.0 * se, "mean {mean}");
}

#[test]
fn rejects_corrupt_blobs() {
    let x = DenseVector::new((0..50).map(|i| i as f32).collect()).unwrap();
    for name in SCHEMES {
        let mut blob = spec(name).compress(&x, 3).unwrap();
        if blob.bit_length == 0 {
            continue;
        }
        blob.bit_length -= 1;
        blob.payload.truncate(blob.bit_length.div_ceil(8) as usize);
        assert!(
            decode_counting(&blob).is_err(),
            "{name} decoded a truncated payload"
        );
    }
}
