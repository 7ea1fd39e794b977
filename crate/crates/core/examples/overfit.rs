//! Overfits the default descriptor on eight small synthetic pairs and prints
//! the registered error curve.
//!
//! ```text
//! cargo run --release --example overfit -- [epochs]
//! ```

use deftrans::geometry::mean_distance_over;
use deftrans::synth::{make_pair, sample_primitive, ChallengeSpec, Primitive};
use deftrans::training::{train, TrainConfig};

fn main() -> deftrans::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let pairs = (0..8u64)
        .map(|seed| {
            let shape = Primitive::ALL[seed as usize % Primitive::ALL.len()];
            let source = sample_primitive(shape, 256, seed)?;
            let spec = ChallengeSpec {
                deformation_level: 0.2,
                noise_sigma: 0.0,
                outlier_fraction: 0.0,
                overlap_ratio: 1.0,
                rotation_max: 0.0,
                seed,
            };
            make_pair(&source, &spec)
        })
        .collect::<deftrans::Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let before: f64 = pairs
        .iter()
        .map(|p| mean_distance_over(&p.source, &p.target, &p.correspondences))
        .sum::<deftrans::Result<f64>>()?
        / pairs.len() as f64;
    let (_, report) = train(&pairs, &cfg)?;
    println!("error before registration {before:.5}");
    println!("registered error with untrained params {:.5}", report.initial_val_mean_distance);
    for (e, v) in report.val_mean_distance.iter().enumerate() {
        println!(
            "epoch {:>4}  loss {:.4e}  registered {:.5}  ratio {:.3}",
            e + 1,
            report.epoch_loss[e],
            v,
            v / before
        );
    }
    println!("wall clock {:.1}s", report.wall_clock_secs);
    Ok(())
}
