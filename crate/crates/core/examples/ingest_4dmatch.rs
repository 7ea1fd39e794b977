//! Writes a synthetic archive record in the 4DMatch layout, reads it back and
//! converts it to a registration pair.

use deftrans::geometry::Vec3;
use deftrans::io::{read_record, reconstruct_4dmatch_target, record_to_pair, write_record, FourDMatchRecord};
use nalgebra::{Rotation3, Unit};

fn main() -> deftrans::Result<()> {
    let dir = tempfile_dir();
    let x: Vec<Vec3> = (0..50).map(|i| Vec3::new(i as f64 / 50.0, (i % 7) as f64 / 7.0, 0.1)).collect();
    let d: Vec<Vec3> = x.iter().map(|p| Vec3::new(0.0, 0.0, 0.2 * p.x * p.x)).collect();
    let rec = FourDMatchRecord {
        x,
        d,
        r: *Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::new(1.0, 1.0, 0.0)), 0.4).matrix(),
        t: Vec3::new(0.1, -0.2, 0.3),
        overlap: 0.6,
        corr: (0..40).map(|i| (i, i)).collect(),
    };
    let path = dir.join("cat_0000_0004.npz");
    write_record(&path, &rec)?;

    let back = read_record(&path)?;
    let target = reconstruct_4dmatch_target(&back)?;
    let pair = record_to_pair(&back, &path.display().to_string())?;
    println!(
        "{} source points, {} reconstructed target points, label {}",
        back.x.len(),
        target.len(),
        pair.meta.label.as_deref().unwrap_or("-")
    );
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("deftrans-ingest-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}
