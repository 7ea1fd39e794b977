//! Parameter checkpoints: an `.npz` archive holding one array per tensor
//! plus a `__manifest__` entry (UTF-8 JSON stored as a `u8` array) with the
//! format version, the architecture config and every tensor's shape.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2};
use ndarray_npy::{NpzReader, NpzWriter};
use serde::{Deserialize, Serialize};

use super::params::{DescriptorConfig, DescriptorParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "__manifest__";
const EXTRA_PREFIX: &str = "extra/";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config: DescriptorConfig,
    tensors: BTreeMap<String, (usize, usize)>,
    extra: BTreeMap<String, (usize, usize)>,
}

/// Writes `params` and optional auxiliary arrays (e.g. optimizer moments).
pub fn save_checkpoint(
    path: &Path,
    params: &DescriptorParams,
    extra: &BTreeMap<String, Array2<f64>>,
) -> Result<()> {
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: params.config().clone(),
        tensors: params.tensors().iter().map(|(k, v)| (k.clone(), v.dim())).collect(),
        extra: extra.iter().map(|(k, v)| (k.clone(), v.dim())).collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut npz = NpzWriter::new(BufWriter::new(file));
    let write_err = |e: ndarray_npy::WriteNpzError| Error::format(path, e.to_string());
    npz.add_array(MANIFEST, &Array1::from(json)).map_err(write_err)?;
    for (name, t) in params.tensors() {
        npz.add_array(name.as_str(), t).map_err(write_err)?;
    }
    for (name, t) in extra {
        npz.add_array(format!("{EXTRA_PREFIX}{name}"), t).map_err(write_err)?;
    }
    npz.finish().map_err(write_err)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(DescriptorParams, BTreeMap<String, Array2<f64>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let read_err = |e: ndarray_npy::ReadNpzError| Error::format(path, e.to_string());
    let mut npz = NpzReader::new(BufReader::new(file)).map_err(read_err)?;
    let raw: Array1<u8> = npz.by_name(MANIFEST).map_err(read_err)?;
    let manifest: Manifest = serde_json::from_slice(raw.as_slice().unwrap_or(&raw.to_vec()))
        .map_err(|e| Error::format(path, format!("bad manifest: {e}")))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Compatibility(format!(
            "checkpoint format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let mut tensors = BTreeMap::new();
    for (name, shape) in &manifest.tensors {
        let t: Array2<f64> = npz.by_name(name).map_err(read_err)?;
        if t.dim() != *shape {
            return Err(Error::format(path, format!("tensor '{name}' disagrees with manifest shape")));
        }
        tensors.insert(name.clone(), t);
    }
    let mut extra = BTreeMap::new();
    for name in manifest.extra.keys() {
        let t: Array2<f64> = npz
            .by_name(&format!("{EXTRA_PREFIX}{name}"))
            .map_err(read_err)?;
        extra.insert(name.clone(), t);
    }
    Ok((DescriptorParams::from_tensors(manifest.config, tensors)?, extra))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.npz");
        let params = DescriptorParams::init(&DescriptorConfig::tiny(), 42).unwrap();
        let mut extra = BTreeMap::new();
        extra.insert("step".to_string(), Array2::from_elem((1, 1), 17.0));
        save_checkpoint(&path, &params, &extra).unwrap();
        let (back, extra_back) = load_checkpoint(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(extra_back, extra);
        for (name, t) in params.tensors() {
            let b = back.get(name);
            assert!(t.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_checkpoint(Path::new("/nonexistent/ckpt.npz")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
