//! Trains briefly on a handful of pairs, then registers a held-out pair and
//! writes the warped source.
//!
//! ```text
//! cargo run --release --example register -- [epochs] [out.xyz]
//! ```

use deftrans::geometry::{apply_deformation, chamfer_distance, mean_distance_over};
use deftrans::io::write_xyz;
use deftrans::solver::SolverConfig;
use deftrans::synth::{make_pair, sample_primitive, ChallengeSpec, Primitive, RegistrationPair};
use deftrans::training::{register, train, Normalization, TrainConfig};

fn pair(seed: u64) -> deftrans::Result<RegistrationPair> {
    let shape = Primitive::ALL[seed as usize % Primitive::ALL.len()];
    let source = sample_primitive(shape, 256, seed)?;
    make_pair(
        &source,
        &ChallengeSpec {
            deformation_level: 0.2,
            seed,
            ..ChallengeSpec::default()
        },
    )
}

fn main() -> deftrans::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let out = args.next().unwrap_or_else(|| "registered.xyz".into());

    let training = (0..6).map(pair).collect::<deftrans::Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let (params, _) = train(&training, &cfg)?;

    let held_out = pair(100)?;
    let field = register(
        &params,
        &held_out.source,
        &held_out.target,
        &SolverConfig::default(),
        Normalization::UnitDiagonal,
    )?;
    let moved = apply_deformation(&held_out.source, &field)?;
    println!(
        "mean distance {:.5} -> {:.5}",
        mean_distance_over(&held_out.source, &held_out.target, &held_out.correspondences)?,
        mean_distance_over(&moved, &held_out.target, &held_out.correspondences)?
    );
    println!(
        "chamfer {:.3e} -> {:.3e}",
        chamfer_distance(&held_out.source, &held_out.target)?,
        chamfer_distance(&moved, &held_out.target)?
    );
    write_xyz(std::path::Path::new(&out), &moved)?;
    println!("wrote {out}");
    Ok(())
}
