//! The native pair bundle: a directory holding `source.xyz`, `target.xyz`,
//! `corr.csv` and `meta.json`.
//!
//! Point files carry one `x y z` line per point in `{:.16e}` notation
//! (17 significant digits), which round-trips every `f64` exactly. The
//! metadata document also stores the ground-truth field, the rigid part and
//! the outlier indices so that a bundle reproduces the full pair.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, DeformationField, PointCloud, RigidTransform, Vec3};
use crate::synth::{ChallengeSpec, PairMeta, RegistrationPair, StageSeeds};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
pub const SOURCE_FILE: &str = "source.xyz";
pub const TARGET_FILE: &str = "target.xyz";
pub const CORR_FILE: &str = "corr.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigidDoc {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaDoc {
    format_version: u32,
    provenance: String,
    spec: Option<ChallengeSpec>,
    stage_seeds: Option<StageSeeds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    overlap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    rigid: RigidDoc,
    outliers: Vec<usize>,
    field_gt: Vec<[f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrRow {
    source: usize,
    target: usize,
}

/// Writes `pair` into directory `dir`, creating it if needed.
pub fn write_bundle(pair: &RegistrationPair, dir: &Path) -> Result<()> {
    pair.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_xyz(&dir.join(SOURCE_FILE), &pair.source)?;
    write_xyz(&dir.join(TARGET_FILE), &pair.target)?;

    let corr_path = dir.join(CORR_FILE);
    let mut w = csv::Writer::from_path(&corr_path).map_err(|e| csv_err(&corr_path, e))?;
    for &(source, target) in pair.correspondences.pairs() {
        w.serialize(CorrRow { source, target })
            .map_err(|e| csv_err(&corr_path, e))?;
    }
    // The csv writer emits no header for an empty set; keep the file self-describing.
    if pair.correspondences.is_empty() {
        w.write_record(["source", "target"]).map_err(|e| csv_err(&corr_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&corr_path, e))?;

    let r = pair.rigid.rotation();
    let t = pair.rigid.translation();
    let doc = MetaDoc {
        format_version: BUNDLE_FORMAT_VERSION,
        provenance: pair.meta.provenance.clone(),
        spec: pair.meta.spec,
        stage_seeds: pair.meta.stage_seeds,
        overlap: pair.meta.overlap,
        label: pair.meta.label.clone(),
        rigid: RigidDoc {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.x, t.y, t.z],
        },
        outliers: pair.outliers.clone(),
        field_gt: pair.field_gt.displacements().iter().map(|d| [d.x, d.y, d.z]).collect(),
    };
    let meta_path = dir.join(META_FILE);
    let mut json = serde_json::to_string_pretty(&doc).expect("metadata serializes");
    json.push('\n');
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))
}

/// Reads a bundle written by [`write_bundle`].
pub fn read_bundle(dir: &Path) -> Result<RegistrationPair> {
    for part in [SOURCE_FILE, TARGET_FILE, CORR_FILE, META_FILE] {
        if !dir.join(part).is_file() {
            return Err(Error::format(dir, format!("bundle is missing {part}")));
        }
    }
    let source = read_xyz(&dir.join(SOURCE_FILE))?;
    let target = read_xyz(&dir.join(TARGET_FILE))?;

    let corr_path = dir.join(CORR_FILE);
    let mut rdr = csv::Reader::from_path(&corr_path).map_err(|e| csv_err(&corr_path, e))?;
    let mut pairs = Vec::new();
    for (row, rec) in rdr.deserialize::<CorrRow>().enumerate() {
        // Header is line 1.
        let rec = rec.map_err(|e| Error::Parse {
            path: corr_path.clone(),
            line: row + 2,
            msg: e.to_string(),
        })?;
        pairs.push((rec.source, rec.target));
    }
    let correspondences = CorrespondenceSet::new(pairs, source.len(), target.len())
        .map_err(|e| Error::format(&corr_path, e.to_string()))?;

    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let doc: MetaDoc = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if doc.format_version != BUNDLE_FORMAT_VERSION {
        return Err(Error::format(
            &meta_path,
            format!("unsupported bundle format version {}", doc.format_version),
        ));
    }
    let rot = Matrix3::from_fn(|i, j| doc.rigid.rotation[i][j]);
    let rigid = RigidTransform::new(rot, Vec3::from(doc.rigid.translation))
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let field_gt = DeformationField::new(doc.field_gt.iter().map(|d| Vec3::from(*d)).collect())
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;

    let pair = RegistrationPair {
        source,
        target,
        correspondences,
        field_gt,
        rigid,
        outliers: doc.outliers,
        meta: PairMeta {
            spec: doc.spec,
            stage_seeds: doc.stage_seeds,
            provenance: doc.provenance,
            overlap: doc.overlap,
            label: doc.label,
        },
    };
    pair.validate().map_err(|e| Error::format(dir, e.to_string()))?;
    Ok(pair)
}

/// Writes one `x y z` line per point.
pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in cloud.points() {
        writeln!(w, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an XYZ file; blank lines and `#` comments are skipped.
pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 coordinates, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (slot, field) in p.iter_mut().zip(&fields) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("'{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite coordinate '{field}'")));
            }
            *slot = v;
        }
        points.push(Vec3::from(p));
    }
    if points.is_empty() {
        return Err(Error::format(path, "no points"));
    }
    PointCloud::new(points)
}

/// Bundle directories directly under `root` (those containing `meta.json`),
/// sorted by name.
pub fn list_bundles(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(META_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(META_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_pair, sample_primitive, Primitive};

    fn sample_pair(n: usize, seed: u64) -> RegistrationPair {
        let source = sample_primitive(Primitive::Torus, n, seed).unwrap();
        let spec = ChallengeSpec {
            deformation_level: 0.3,
            noise_sigma: 0.01,
            outlier_fraction: 0.1,
            overlap_ratio: 0.8,
            rotation_max: 0.5,
            seed,
        };
        make_pair(&source, &spec).unwrap()
    }

    #[test]
    fn round_trip_preserves_pair_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        let pair = sample_pair(300, 11);
        write_bundle(&pair, dir.path()).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back, pair);
        assert_eq!(back.meta.spec.unwrap().seed, 11);
    }

    #[test]
    fn correspondence_rows_match_count() {
        let dir = tempfile::tempdir().unwrap();
        let pair = sample_pair(1000, 2);
        write_bundle(&pair, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(CORR_FILE)).unwrap();
        assert_eq!(text.lines().count() - 1, pair.correspondences.len());
    }

    #[test]
    fn missing_correspondences_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&sample_pair(50, 3), dir.path()).unwrap();
        fs::remove_file(dir.path().join(CORR_FILE)).unwrap();
        match read_bundle(dir.path()).unwrap_err() {
            Error::Format { msg, .. } => assert!(msg.contains(CORR_FILE)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_coordinate_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&sample_pair(50, 4), dir.path()).unwrap();
        let path = dir.path().join(TARGET_FILE);
        let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
        lines[6] = "0.0 NaN 1.0".into();
        fs::write(&path, lines.join("\n")).unwrap();
        match read_bundle(dir.path()).unwrap_err() {
            Error::Parse { line, path: p, .. } => {
                assert_eq!(line, 7);
                assert!(p.ends_with(TARGET_FILE));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_corr_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&sample_pair(50, 5), dir.path()).unwrap();
        let path = dir.path().join(CORR_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("3,x\n");
        let rows = text.lines().count();
        fs::write(&path, text).unwrap();
        match read_bundle(dir.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, rows),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn xyz_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let cloud = PointCloud::new(vec![
            Vec3::new(0.1, -1e-300, 1.0 / 3.0),
            Vec3::new(f64::MAX, f64::MIN_POSITIVE, -0.0),
        ])
        .unwrap();
        write_xyz(&path, &cloud).unwrap();
        let back = read_xyz(&path).unwrap();
        for (a, b) in cloud.points().iter().zip(back.points()) {
            for c in 0..3 {
                assert_eq!(a[c].to_bits(), b[c].to_bits());
            }
        }
    }
}
