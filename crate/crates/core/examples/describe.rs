//! Computes conditioned descriptors for one pair with freshly initialised
//! weights and reports how well nearest descriptors match ground truth.

use deftrans::descriptor::{alignment_transform, describe, DescriptorConfig, DescriptorParams};
use deftrans::synth::{make_pair, sample_primitive, ChallengeSpec, Primitive};

fn main() -> deftrans::Result<()> {
    let source = sample_primitive(Primitive::Cylinder, 256, 3)?;
    let pair = make_pair(
        &source,
        &ChallengeSpec {
            deformation_level: 0.2,
            seed: 3,
            ..ChallengeSpec::default()
        },
    )?;
    let cfg = DescriptorConfig::default();
    let params = DescriptorParams::init(&cfg, 0)?;
    println!("{} parameters", cfg.parameter_count());
    println!("alignment matrix {:.3}", alignment_transform(&pair.source, &params)?);

    let (fx, fy) = describe(&pair.source, &pair.target, &params)?;
    println!("descriptors {} x {} and {} x {}", fx.len(), fx.width(), fy.len(), fy.width());

    let (a, b) = (fx.as_array(), fy.as_array());
    let mut hits = 0;
    for &(i, j) in pair.correspondences.pairs() {
        let best = (0..b.nrows())
            .min_by(|&p, &q| {
                let dp = (&a.row(i) - &b.row(p)).mapv(|v| v * v).sum();
                let dq = (&a.row(i) - &b.row(q)).mapv(|v| v * v).sum();
                dp.total_cmp(&dq)
            })
            .unwrap();
        hits += usize::from(best == j);
    }
    println!("nearest-descriptor match rate {:.3}", hits as f64 / pair.correspondences.len() as f64);
    Ok(())
}
