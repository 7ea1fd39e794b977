//! 4DMatch-style archives and target reconstruction.
//!
//! A record is an `.npz` archive with arrays `X` (n×3 source), `D` (n×3
//! deformation), `R` (3×3), `t` (3 values), `overlap` (scalar) and `corr`
//! (m×2 index pairs). Upstream archives use other names; the adapter accepts
//! these aliases:
//!
//! | field     | upstream name     |
//! |-----------|-------------------|
//! | `X`       | `s_pc`            |
//! | `D`       | `s2t_flow`        |
//! | `R`       | `rot`             |
//! | `t`       | `trans`           |
//! | `corr`    | `correspondences` |
//!
//! When `overlap` is absent it is taken as the fraction of source points
//! that appear in `corr`. Single-precision and integer arrays of any width
//! are widened on load.

use std::fs::File;
use std::io::{BufReader, Read, Seek};
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use ndarray::{Array2, ArrayD, IxDyn, OwnedRepr};
use ndarray_npy::{NpzReader, NpzWriter};

use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, DeformationField, PointCloud, RigidTransform, Vec3};
use crate::synth::{PairMeta, RegistrationPair};

/// Overlap above which a record is labelled `4DMatch`.
pub const OVERLAP_THRESHOLD: f64 = 0.45;
/// Orthogonality tolerance for archived rotations.
pub const RECORD_ROTATION_TOLERANCE: f64 = 1e-5;

const ALIASES: [(&str, &[&str]); 6] = [
    ("X", &["X", "s_pc"]),
    ("D", &["D", "s2t_flow"]),
    ("R", &["R", "rot"]),
    ("t", &["t", "trans"]),
    ("overlap", &["overlap"]),
    ("corr", &["corr", "correspondences"]),
];

/// One source cloud with its deformation, rigid motion and correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct FourDMatchRecord {
    pub x: Vec<Vec3>,
    pub d: Vec<Vec3>,
    pub r: Matrix3<f64>,
    pub t: Vec3,
    pub overlap: f64,
    /// `(source index, original target index)` pairs.
    pub corr: Vec<(usize, usize)>,
}

impl FourDMatchRecord {
    pub fn validate(&self) -> Result<()> {
        if self.x.is_empty() {
            return Err(Error::EmptyInput("record has no source points".into()));
        }
        if self.d.len() != self.x.len() {
            return Err(Error::Dimension(format!(
                "deformation has {} rows for {} source points",
                self.d.len(),
                self.x.len()
            )));
        }
        RigidTransform::with_tolerance(self.r, self.t, RECORD_ROTATION_TOLERANCE)?;
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::Parameter(format!("overlap {} outside [0, 1]", self.overlap)));
        }
        if let Some(&(s, _)) = self.corr.iter().find(|c| c.0 >= self.x.len()) {
            return Err(Error::Dimension(format!("correspondence source index {s} out of range")));
        }
        Ok(())
    }

    /// Source indices with a correspondence, first occurrence order.
    pub fn corresponding_indices(&self) -> Vec<usize> {
        let mut seen = vec![false; self.x.len()];
        self.corr
            .iter()
            .filter_map(|&(s, _)| (!std::mem::replace(&mut seen[s], true)).then_some(s))
            .collect()
    }

    pub fn label(&self) -> &'static str {
        overlap_label(self.overlap)
    }
}

pub fn overlap_label(overlap: f64) -> &'static str {
    if overlap > OVERLAP_THRESHOLD {
        "4DMatch"
    } else {
        "4DLoMatch"
    }
}

/// New target `y_i = t + R·(x_i + d_i)` over the corresponded source points,
/// in [`FourDMatchRecord::corresponding_indices`] order. Points without a
/// correspondence are dropped.
pub fn reconstruct_4dmatch_target(rec: &FourDMatchRecord) -> Result<PointCloud> {
    rec.validate()?;
    let idx = rec.corresponding_indices();
    if idx.is_empty() {
        return Err(Error::EmptyInput("record has no correspondences".into()));
    }
    PointCloud::new(idx.iter().map(|&i| rec.t + rec.r * (rec.x[i] + rec.d[i])).collect())
}

/// Builds a bundle-ready pair: correspondence-restricted source, the
/// reconstructed target and identity correspondences between them.
pub fn record_to_pair(rec: &FourDMatchRecord, provenance: &str) -> Result<RegistrationPair> {
    let target = reconstruct_4dmatch_target(rec)?;
    let idx = rec.corresponding_indices();
    let source = PointCloud::new(idx.iter().map(|&i| rec.x[i]).collect())?;
    let field_gt = DeformationField::new(idx.iter().map(|&i| rec.d[i]).collect())?;
    let rigid = RigidTransform::with_tolerance(rec.r, rec.t, RECORD_ROTATION_TOLERANCE)?;
    Ok(RegistrationPair {
        correspondences: CorrespondenceSet::identity(source.len()),
        source,
        target,
        field_gt,
        rigid,
        outliers: Vec::new(),
        meta: PairMeta {
            spec: None,
            stage_seeds: None,
            provenance: provenance.to_string(),
            overlap: Some(rec.overlap),
            label: Some(rec.label().to_string()),
        },
    })
}

/// Reads one record from an `.npz` archive.
pub fn read_record(path: &Path) -> Result<FourDMatchRecord> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut npz = NpzReader::new(BufReader::new(file)).map_err(|e| Error::format(path, e.to_string()))?;
    let names = npz.names().map_err(|e| Error::format(path, e.to_string()))?;
    let stored = |field: &str| -> Option<String> {
        let aliases = ALIASES.iter().find(|(f, _)| *f == field).map(|(_, a)| *a).unwrap_or(&[]);
        aliases.iter().find_map(|alias| {
            names
                .iter()
                .find(|n| n.as_str() == *alias || n.strip_suffix(".npy") == Some(alias))
                .cloned()
        })
    };
    let require = |field: &str| stored(field).ok_or_else(|| Error::format(path, format!("missing array '{field}'")));

    let x = read_float(&mut npz, &require("X")?, path)?;
    let d = read_float(&mut npz, &require("D")?, path)?;
    let r = read_float(&mut npz, &require("R")?, path)?;
    let t = read_float(&mut npz, &require("t")?, path)?;
    let corr = read_index(&mut npz, &require("corr")?, path)?;

    let x = rows3(&x, "X", path)?;
    let d = rows3(&d, "D", path)?;
    if r.len() != 9 {
        return Err(Error::format(path, format!("R has {} entries, expected 9", r.len())));
    }
    if t.len() != 3 {
        return Err(Error::format(path, format!("t has {} entries, expected 3", t.len())));
    }
    let rv: Vec<f64> = r.iter().copied().collect();
    let tv: Vec<f64> = t.iter().copied().collect();
    if corr.ndim() != 2 || corr.shape()[1] != 2 {
        return Err(Error::format(path, format!("corr has shape {:?}, expected m×2", corr.shape())));
    }
    let corr: Vec<(usize, usize)> = corr
        .outer_iter()
        .map(|row| {
            let s = usize::try_from(row[0]).map_err(|_| Error::format(path, "negative correspondence index"))?;
            let t = usize::try_from(row[1]).map_err(|_| Error::format(path, "negative correspondence index"))?;
            Ok((s, t))
        })
        .collect::<Result<_>>()?;

    let overlap = match stored("overlap") {
        Some(name) => {
            let o = read_float(&mut npz, &name, path)?;
            *o.iter().next().ok_or_else(|| Error::format(path, "empty overlap array"))?
        }
        None => {
            let mut seen = vec![false; x.len()];
            for &(s, _) in &corr {
                if let Some(flag) = seen.get_mut(s) {
                    *flag = true;
                }
            }
            seen.iter().filter(|&&f| f).count() as f64 / x.len().max(1) as f64
        }
    };

    let rec = FourDMatchRecord {
        x,
        d,
        r: Matrix3::from_row_slice(&rv),
        t: Vec3::new(tv[0], tv[1], tv[2]),
        overlap,
        corr,
    };
    rec.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(rec)
}

/// Writes a record with the canonical field names.
pub fn write_record(path: &Path, rec: &FourDMatchRecord) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut npz = NpzWriter::new(file);
    let err = |e: ndarray_npy::WriteNpzError| Error::format(path, e.to_string());
    let to_arr = |v: &[Vec3]| Array2::from_shape_fn((v.len(), 3), |(i, c)| v[i][c]);
    npz.add_array("X", &to_arr(&rec.x)).map_err(err)?;
    npz.add_array("D", &to_arr(&rec.d)).map_err(err)?;
    npz.add_array("R", &Array2::from_shape_fn((3, 3), |(i, j)| rec.r[(i, j)]))
        .map_err(err)?;
    npz.add_array("t", &ndarray::arr1(&[rec.t.x, rec.t.y, rec.t.z])).map_err(err)?;
    npz.add_array("overlap", &ndarray::arr0(rec.overlap)).map_err(err)?;
    let corr = Array2::from_shape_fn((rec.corr.len(), 2), |(i, c)| {
        let p = rec.corr[i];
        (if c == 0 { p.0 } else { p.1 }) as i64
    });
    npz.add_array("corr", &corr).map_err(err)?;
    npz.finish().map_err(err)?;
    Ok(())
}

/// Archive paths for ingestion: the file itself, or every `.npz` in a
/// directory sorted by name.
pub fn record_paths(archive: &Path) -> Result<Vec<PathBuf>> {
    if archive.is_file() {
        return Ok(vec![archive.to_path_buf()]);
    }
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(archive).map_err(|e| Error::io(archive, e))? {
        let p = entry.map_err(|e| Error::io(archive, e))?.path();
        if p.extension().is_some_and(|x| x == "npz") {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

fn read_float<R: Read + Seek>(npz: &mut NpzReader<R>, name: &str, path: &Path) -> Result<ArrayD<f64>> {
    if let Ok(a) = npz.by_name::<OwnedRepr<f64>, IxDyn>(name) {
        return Ok(a);
    }
    npz.by_name::<OwnedRepr<f32>, IxDyn>(name)
        .map(|a| a.mapv(f64::from))
        .map_err(|e| Error::format(path, format!("array '{name}': {e}")))
}

fn read_index<R: Read + Seek>(npz: &mut NpzReader<R>, name: &str, path: &Path) -> Result<ArrayD<i64>> {
    if let Ok(a) = npz.by_name::<OwnedRepr<i64>, IxDyn>(name) {
        return Ok(a);
    }
    if let Ok(a) = npz.by_name::<OwnedRepr<i32>, IxDyn>(name) {
        return Ok(a.mapv(i64::from));
    }
    if let Ok(a) = npz.by_name::<OwnedRepr<u32>, IxDyn>(name) {
        return Ok(a.mapv(i64::from));
    }
    let a = npz
        .by_name::<OwnedRepr<u64>, IxDyn>(name)
        .map_err(|e| Error::format(path, format!("array '{name}': {e}")))?;
    if a.iter().any(|&v| v > i64::MAX as u64) {
        return Err(Error::format(path, format!("array '{name}' has an index overflow")));
    }
    Ok(a.mapv(|v| v as i64))
}

fn rows3(a: &ArrayD<f64>, field: &str, path: &Path) -> Result<Vec<Vec3>> {
    if a.ndim() != 2 || a.shape()[1] != 3 {
        return Err(Error::format(path, format!("{field} has shape {:?}, expected n×3", a.shape())));
    }
    let rows: Vec<Vec3> = a.outer_iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect();
    if rows.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::format(path, format!("{field} has non-finite values")));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(seed: u64, r: Matrix3<f64>, t: Vec3) -> FourDMatchRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = || Vec3::new(rng.random(), rng.random(), rng.random());
        let x: Vec<Vec3> = (0..20).map(|_| v()).collect();
        let d: Vec<Vec3> = (0..20).map(|_| v() * 0.1).collect();
        FourDMatchRecord {
            x,
            d,
            r,
            t,
            overlap: 0.6,
            corr: vec![(3, 0), (0, 5), (7, 1), (3, 2), (12, 9)],
        }
    }

    #[test]
    fn identity_transform_gives_x_plus_d_exactly() {
        let rec = record(1, Matrix3::identity(), Vec3::zeros());
        let y = reconstruct_4dmatch_target(&rec).unwrap();
        assert_eq!(rec.corresponding_indices(), vec![3, 0, 7, 12]);
        for (k, &i) in rec.corresponding_indices().iter().enumerate() {
            assert_eq!(y.point(k), rec.x[i] + rec.d[i]);
        }
    }

    #[test]
    fn pure_translation() {
        let mut rec = record(2, Matrix3::identity(), Vec3::new(0.0, 0.0, 2.0));
        rec.d = vec![Vec3::zeros(); rec.x.len()];
        let y = reconstruct_4dmatch_target(&rec).unwrap();
        for (k, &i) in rec.corresponding_indices().iter().enumerate() {
            assert_eq!(y.point(k), rec.x[i] + Vec3::new(0.0, 0.0, 2.0));
        }
    }

    #[test]
    fn labels_at_threshold() {
        assert_eq!(overlap_label(0.46), "4DMatch");
        assert_eq!(overlap_label(0.44), "4DLoMatch");
        assert_eq!(overlap_label(0.45), "4DLoMatch");
    }

    #[test]
    fn bad_rotation_rejected() {
        let rec = record(3, Matrix3::identity() * 1.1, Vec3::zeros());
        assert!(matches!(reconstruct_4dmatch_target(&rec), Err(Error::InvalidTransform(_))));
    }

    #[test]
    fn npz_round_trip_and_aliases() {
        let dir = tempfile::tempdir().unwrap();
        let r = *RigidTransform::rotation_z(0.7).rotation();
        let rec = record(4, r, Vec3::new(1.0, -2.0, 0.5));
        let path = dir.path().join("a.npz");
        write_record(&path, &rec).unwrap();
        assert_eq!(read_record(&path).unwrap(), rec);

        // Upstream naming, single precision, (3, 1) translation, int32 pairs, no overlap.
        let up = dir.path().join("b.npz");
        let mut npz = NpzWriter::new(File::create(&up).unwrap());
        let f32_rows = |v: &[Vec3]| Array2::from_shape_fn((v.len(), 3), |(i, c)| v[i][c] as f32);
        npz.add_array("s_pc", &f32_rows(&rec.x)).unwrap();
        npz.add_array("s2t_flow", &f32_rows(&rec.d)).unwrap();
        npz.add_array("rot", &Array2::from_shape_fn((3, 3), |(i, j)| r[(i, j)] as f32)).unwrap();
        npz.add_array("trans", &Array2::from_shape_vec((3, 1), vec![1.0f32, -2.0, 0.5]).unwrap())
            .unwrap();
        npz.add_array("correspondences", &Array2::from_shape_vec((2, 2), vec![0i32, 1, 4, 4]).unwrap())
            .unwrap();
        npz.finish().unwrap();
        let got = read_record(&up).unwrap();
        assert_eq!(got.corr, vec![(0, 1), (4, 4)]);
        assert!((got.overlap - 2.0 / 20.0).abs() < 1e-15);
        assert!((got.t - rec.t).norm() < 1e-6);
    }

    #[test]
    fn pair_has_equal_cardinality() {
        let rec = record(5, Matrix3::identity(), Vec3::zeros());
        let pair = record_to_pair(&rec, "test").unwrap();
        assert_eq!(pair.source.len(), pair.target.len());
        assert_eq!(pair.meta.label.as_deref(), Some("4DMatch"));
        assert_eq!(pair.ground_truth_residual(), 0.0);
    }
}
