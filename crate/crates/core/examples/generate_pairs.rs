//! Generates a few challenge pairs and writes them as bundles.
//!
//! ```text
//! cargo run --example generate_pairs -- [out_dir]
//! ```

use std::path::PathBuf;

use deftrans::geometry::mean_distance_over;
use deftrans::io::write_bundle;
use deftrans::synth::{make_pair, percentile_95, sample_primitive, ChallengeSpec, Primitive};

fn main() -> deftrans::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/pairs".into()));
    for (k, shape) in Primitive::ALL.into_iter().enumerate() {
        let source = sample_primitive(shape, 1024, k as u64)?;
        let spec = ChallengeSpec {
            deformation_level: 0.3,
            noise_sigma: 0.005,
            outlier_fraction: 0.1,
            overlap_ratio: 0.8,
            rotation_max: 0.5,
            seed: k as u64,
        };
        let pair = make_pair(&source, &spec)?;
        let dir = out.join(shape.name());
        write_bundle(&pair, &dir)?;
        println!(
            "{:<10} source {:>4}  target {:>4}  overlap {:.3}  p95 |u| {:.4}  initial error {:.4}  -> {}",
            shape.name(),
            pair.source.len(),
            pair.target.len(),
            pair.overlap(),
            percentile_95(&pair.field_gt.magnitudes()),
            mean_distance_over(&pair.source, &pair.target, &pair.correspondences)?,
            dir.display()
        );
    }
    Ok(())
}
