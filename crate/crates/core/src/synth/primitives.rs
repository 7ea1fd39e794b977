//! Surface samplers for the primitive shapes used as synthetic sources.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Box,
    Sphere,
    Cylinder,
    Cone,
    Torus,
}

impl Primitive {
    pub const ALL: [Primitive; 5] = [
        Primitive::Box,
        Primitive::Sphere,
        Primitive::Cylinder,
        Primitive::Cone,
        Primitive::Torus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Box => "box",
            Primitive::Sphere => "sphere",
            Primitive::Cylinder => "cylinder",
            Primitive::Cone => "cone",
            Primitive::Torus => "torus",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown primitive '{s}'")))
    }
}

/// Samples `n` points on the primitive's surface, centred and scaled to a
/// unit bounding-box diagonal.
pub fn sample_primitive(kind: Primitive, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 2 {
        return Err(Error::Parameter("need at least two points per primitive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec3> = (0..n)
        .map(|_| match kind {
            Primitive::Box => sample_box(&mut rng),
            Primitive::Sphere => sample_sphere(&mut rng),
            Primitive::Cylinder => sample_cylinder(&mut rng),
            Primitive::Cone => sample_cone(&mut rng),
            Primitive::Torus => sample_torus(&mut rng),
        })
        .collect();
    Ok(normalize_unit_diagonal(&PointCloud::new(points)?)?.0)
}

/// Centres the cloud on its bounding-box centre and rescales the diagonal to 1.
/// Returns the normalized cloud, the removed centre and the applied scale.
pub fn normalize_unit_diagonal(cloud: &PointCloud) -> Result<(PointCloud, Vec3, f64)> {
    let (lo, hi) = cloud.bounding_box();
    let diag = (hi - lo).norm();
    if diag <= 0.0 {
        return Err(Error::Input("cannot normalize a cloud with zero extent".into()));
    }
    let centre = (lo + hi) * 0.5;
    let scale = 1.0 / diag;
    let points = cloud.points().iter().map(|p| (p - centre) * scale).collect();
    Ok((cloud.with_points(points)?, centre, scale))
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

pub(crate) fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    unit_vector(rng)
}

fn sample_sphere(rng: &mut ChaCha8Rng) -> Vec3 {
    unit_vector(rng)
}

fn sample_box(rng: &mut ChaCha8Rng) -> Vec3 {
    // Unit cube, faces equally likely since they have equal area.
    let face = rng.random_range(0..6);
    let (u, v): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let side = if face % 2 == 0 { 1.0 } else { -1.0 };
    match face / 2 {
        0 => Vec3::new(side, u, v),
        1 => Vec3::new(u, side, v),
        _ => Vec3::new(u, v, side),
    }
}

fn sample_cylinder(rng: &mut ChaCha8Rng) -> Vec3 {
    // Radius 1, height 2: side area 4π, caps π each.
    let theta = rng.random_range(0.0..2.0 * PI);
    let pick = rng.random_range(0.0..6.0 * PI);
    if pick < 4.0 * PI {
        Vec3::new(theta.cos(), theta.sin(), rng.random_range(-1.0..1.0))
    } else {
        let r = rng.random::<f64>().sqrt();
        let z = if pick < 5.0 * PI { 1.0 } else { -1.0 };
        Vec3::new(r * theta.cos(), r * theta.sin(), z)
    }
}

fn sample_cone(rng: &mut ChaCha8Rng) -> Vec3 {
    // Base radius 1 at z = 0, apex at z = 2.
    let slant = 5.0_f64.sqrt();
    let lateral = PI * slant;
    let base = PI;
    let theta = rng.random_range(0.0..2.0 * PI);
    let r = rng.random::<f64>().sqrt();
    if rng.random_range(0.0..lateral + base) < lateral {
        Vec3::new(r * theta.cos(), r * theta.sin(), 2.0 * (1.0 - r))
    } else {
        Vec3::new(r * theta.cos(), r * theta.sin(), 0.0)
    }
}

fn sample_torus(rng: &mut ChaCha8Rng) -> Vec3 {
    const MAJOR: f64 = 1.0;
    const MINOR: f64 = 0.35;
    loop {
        let u = rng.random_range(0.0..2.0 * PI);
        let v = rng.random_range(0.0..2.0 * PI);
        // Area element is proportional to MAJOR + MINOR cos v.
        let accept = (MAJOR + MINOR * v.cos()) / (MAJOR + MINOR);
        if rng.random::<f64>() <= accept {
            let ring = MAJOR + MINOR * v.cos();
            return Vec3::new(ring * u.cos(), ring * u.sin(), MINOR * v.sin());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_are_unit_diagonal_and_centred() {
        for kind in Primitive::ALL {
            let c = sample_primitive(kind, 300, 4).unwrap();
            assert!((c.diagonal() - 1.0).abs() < 1e-12, "{kind}");
            let (lo, hi) = c.bounding_box();
            assert!(((lo + hi) * 0.5).norm() < 1e-12, "{kind}");
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_primitive(Primitive::Torus, 100, 9).unwrap();
        let b = sample_primitive(Primitive::Torus, 100, 9).unwrap();
        let c = sample_primitive(Primitive::Torus, 100, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn names_round_trip() {
        for kind in Primitive::ALL {
            assert_eq!(kind.name().parse::<Primitive>().unwrap(), kind);
        }
        assert!("dodecahedron".parse::<Primitive>().is_err());
    }
}
