use std::fs;

use deftrans::io::{read_bundle, write_bundle, CORR_FILE, META_FILE, SOURCE_FILE, TARGET_FILE};
use deftrans::synth::{make_pair, sample_primitive, ChallengeSpec, Primitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn hundred_random_pairs_round_trip_byte_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let root = tempfile::tempdir().unwrap();
    for k in 0..100 {
        let shape = Primitive::ALL[rng.random_range(0..5)];
        let n = rng.random_range(64..160);
        let source = sample_primitive(shape, n, rng.random()).unwrap();
        let spec = ChallengeSpec {
            deformation_level: rng.random_range(0.0..=1.0),
            noise_sigma: rng.random_range(0.0..0.04),
            outlier_fraction: rng.random_range(0.0..0.45),
            overlap_ratio: rng.random_range(0.5..=1.0),
            rotation_max: rng.random_range(0.0..3.0),
            seed: rng.random(),
        };
        let pair = make_pair(&source, &spec).unwrap();

        let first = root.path().join(format!("a{k}"));
        let second = root.path().join(format!("b{k}"));
        write_bundle(&pair, &first).unwrap();
        let back = read_bundle(&first).unwrap();
        assert_eq!(back, pair, "pair {k}");
        assert_eq!(back.meta.spec.unwrap().seed, spec.seed);
        write_bundle(&back, &second).unwrap();
        for f in [SOURCE_FILE, TARGET_FILE, CORR_FILE, META_FILE] {
            assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "pair {k} file {f}");
        }
    }
}
