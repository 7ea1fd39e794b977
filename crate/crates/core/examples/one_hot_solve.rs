//! Runs the displacement solver with ideal features: one indicator per
//! correspondence. The recovered field is exact.

use deftrans::descriptor::FeatureField;
use deftrans::geometry::{apply_deformation, mean_distance_over};
use deftrans::solver::{solve, SolverConfig};
use deftrans::synth::{make_pair, sample_primitive, ChallengeSpec, Primitive};
use ndarray::Array2;

fn main() -> deftrans::Result<()> {
    let source = sample_primitive(Primitive::Torus, 200, 6)?;
    let pair = make_pair(
        &source,
        &ChallengeSpec {
            deformation_level: 0.1,
            seed: 6,
            ..ChallengeSpec::default()
        },
    )?;
    let n = pair.source.len();
    let mut fx = Array2::zeros((n, n));
    let mut fy = Array2::zeros((pair.target.len(), n));
    for &(i, j) in pair.correspondences.pairs() {
        fx[[i, i]] = 10.0;
        fy[[j, i]] = 10.0;
    }
    let cfg = SolverConfig {
        k_cand: 32,
        ..SolverConfig::default()
    };
    let sol = solve(&pair.source, &pair.target, &FeatureField::new(fx)?, &FeatureField::new(fy)?, &cfg)?;
    let moved = apply_deformation(&pair.source, &sol.field)?;
    println!(
        "before {:.5}  after {:.3e}",
        mean_distance_over(&pair.source, &pair.target, &pair.correspondences)?,
        mean_distance_over(&moved, &pair.target, &pair.correspondences)?
    );
    Ok(())
}
