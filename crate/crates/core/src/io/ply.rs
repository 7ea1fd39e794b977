//! ASCII PLY export with a scalar channel mapped to colour.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Linear red-to-blue map: `0 → (255, 0, 0)`, `1 → (0, 0, 255)`.
pub fn red_blue(s: f64) -> [u8; 3] {
    let s = s.clamp(0.0, 1.0);
    [((1.0 - s) * 255.0).round() as u8, 0, (s * 255.0).round() as u8]
}

/// Writes `cloud` as PLY with per-vertex colour from attribute `channel`,
/// scaled so the channel minimum is red and the maximum blue. A constant
/// channel maps every vertex to red.
pub fn export_colorized(cloud: &PointCloud, channel: &str, path: &Path) -> Result<()> {
    let values = cloud
        .attribute(channel)
        .ok_or_else(|| Error::Parameter(format!("point cloud has no channel '{channel}'")))?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat ascii 1.0\ncomment channel {channel} min {lo:e} max {hi:e}\n\
         element vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )
    .map_err(io)?;
    for (p, &v) in cloud.points().iter().zip(values) {
        let s = if span > 0.0 { (v - lo) / span } else { 0.0 };
        let [r, g, b] = red_blue(s);
        writeln!(w, "{:.16e} {:.16e} {:.16e} {r} {g} {b}", p.x, p.y, p.z).map_err(io)?;
    }
    w.flush().map_err(io)
}
