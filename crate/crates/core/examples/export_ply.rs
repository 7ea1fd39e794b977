//! Colours a deformed cloud by its ground-truth displacement magnitude and
//! writes it as PLY.

use deftrans::io::export_colorized;
use deftrans::synth::{make_pair, sample_primitive, ChallengeSpec, Primitive};

fn main() -> deftrans::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "displacement.ply".into());
    let source = sample_primitive(Primitive::Sphere, 2000, 1)?;
    let pair = make_pair(
        &source,
        &ChallengeSpec {
            deformation_level: 0.5,
            seed: 1,
            ..ChallengeSpec::default()
        },
    )?;
    let mut cloud = pair.source.clone();
    cloud.set_attribute("displacement", pair.field_gt.magnitudes())?;
    export_colorized(&cloud, "displacement", std::path::Path::new(&out))?;
    println!("wrote {out}: red is still, blue moves most");
    Ok(())
}
