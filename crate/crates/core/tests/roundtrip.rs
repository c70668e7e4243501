use gebq::quantizer::compute_noa_range;
use gebq::{compress, decompress, verify, Mode, PipelineOptions, QuantConfig, Scalar};
use proptest::prelude::*;

fn check<T: Scalar>(values: &[T], mode: Mode, eb: f64, block: u32, threads: usize) -> Vec<u8> {
    let cfg = QuantConfig::new(mode, eb).with_block_size(block);
    let opts = PipelineOptions::with_threads(threads);
    let c = compress(values, &cfg, &opts).unwrap();
    let r = decompress::<T>(&c.bytes, &opts).unwrap();
    let range = (mode == Mode::Noa).then(|| compute_noa_range(values).widen());
    let report = verify(values, &r, mode, eb, range).unwrap();
    assert!(report.passed, "{}", report.summary());
    c.bytes
}

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Abs), Just(Mode::Rel), Just(Mode::Noa)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_f32_bits(bits in prop::collection::vec(any::<u32>(), 0..600),
                          mode in mode(), eb_exp in -6i32..0, block in prop::sample::select(vec![1u32, 2, 7, 64, 4096])) {
        let values: Vec<f32> = bits.into_iter().map(f32::from_bits).collect();
        check(&values, mode, 10f64.powi(eb_exp), block, 1);
    }

    #[test]
    fn arbitrary_f64_bits(bits in prop::collection::vec(any::<u64>(), 0..600),
                          mode in mode(), eb_exp in -9i32..0, block in prop::sample::select(vec![1u32, 3, 64, 4096])) {
        let values: Vec<f64> = bits.into_iter().map(f64::from_bits).collect();
        check(&values, mode, 10f64.powi(eb_exp), block, 1);
    }

    #[test]
    fn thread_count_does_not_change_bytes(values in prop::collection::vec(-1e6f32..1e6, 1..3000), mode in mode()) {
        let one = check(&values, mode, 1e-3, 128, 1);
        let many = check(&values, mode, 1e-3, 128, 4);
        prop_assert_eq!(one, many);
    }
}

#[test]
fn block_boundaries() {
    let values: Vec<f32> = (0..4097 * 2 + 1).map(|i| (i as f32 * 0.37).cos() * 1e3).collect();
    for n in [0, 1, 4095, 4096, 4097, 8193] {
        for mode in [Mode::Abs, Mode::Rel, Mode::Noa] {
            check(&values[..n], mode, 1e-4, 4096, 2);
        }
    }
}
