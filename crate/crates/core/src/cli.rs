//! Command implementations behind the `deftrans` binary.
//!
//! Every command takes a [`RunConfig`] (a JSON document with a schema
//! version, unknown keys rejected) plus a few paths, and writes its
//! artifacts under an output directory. Reports are byte-reproducible from
//! the config and seed; wall-clock timings go to separate files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptor::{load_checkpoint, save_checkpoint, DescriptorParams};
use crate::error::{Error, Result};
use crate::geometry::{apply_deformation, nearest_distances, PointCloud};
use crate::io::{
    export_colorized, list_bundles, read_bundle, read_record, record_paths, record_to_pair, write_bundle, write_xyz,
};
use crate::solver::SolverConfig;
use crate::synth::{make_pair, sample_primitive, ChallengeSpec, Primitive, RegistrationPair};
use crate::training::{
    config_hash, register, train_from, Normalization, PairMetrics, TrainConfig, ValidationReport,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Challenge axis swept by `gen` and `bench`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    DeformationLevel,
    NoiseSigma,
    OutlierFraction,
    OverlapRatio,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::DeformationLevel => "deformation_level",
            Axis::NoiseSigma => "noise_sigma",
            Axis::OutlierFraction => "outlier_fraction",
            Axis::OverlapRatio => "overlap_ratio",
        }
    }

    pub fn get(self, spec: &ChallengeSpec) -> f64 {
        match self {
            Axis::DeformationLevel => spec.deformation_level,
            Axis::NoiseSigma => spec.noise_sigma,
            Axis::OutlierFraction => spec.outlier_fraction,
            Axis::OverlapRatio => spec.overlap_ratio,
        }
    }

    pub fn set(self, spec: &mut ChallengeSpec, value: f64) {
        match self {
            Axis::DeformationLevel => spec.deformation_level = value,
            Axis::NoiseSigma => spec.noise_sigma = value,
            Axis::OutlierFraction => spec.outlier_fraction = value,
            Axis::OverlapRatio => spec.overlap_ratio = value,
        }
    }
}

/// One axis swept over `values`, with `seeds_per_value` pairs per value.
/// Pair `s` of every value uses seed `base_seed + s` and primitive
/// `primitives[s % len]`, so values differ only along the swept axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub seeds_per_value: usize,
    pub base_seed: u64,
    pub points: usize,
    pub primitives: Vec<Primitive>,
    /// Values of the non-swept axes; its `seed` is ignored.
    pub base: ChallengeSpec,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: Axis::DeformationLevel,
            values: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
            seeds_per_value: 3,
            base_seed: 0,
            points: 512,
            primitives: Primitive::ALL.to_vec(),
            base: ChallengeSpec::default(),
        }
    }
}

impl SweepConfig {
    /// Every `(axis value, seed, primitive, spec)` in output order.
    pub fn specs(&self) -> Result<Vec<(f64, u64, Primitive, ChallengeSpec)>> {
        if self.values.is_empty() || self.seeds_per_value == 0 {
            return Err(Error::Config("sweep needs at least one value and one seed".into()));
        }
        if self.primitives.is_empty() {
            return Err(Error::Config("sweep needs at least one primitive".into()));
        }
        if self.points < 2 {
            return Err(Error::Config("sweep needs at least two points per cloud".into()));
        }
        let mut out = Vec::new();
        for &value in &self.values {
            for s in 0..self.seeds_per_value {
                let seed = self.base_seed + s as u64;
                let mut spec = ChallengeSpec { seed, ..self.base };
                self.axis.set(&mut spec, value);
                spec.validate().map_err(|e| Error::Config(format!("{} = {value}: {e}", self.axis.name())))?;
                out.push((value, seed, self.primitives[s % self.primitives.len()], spec));
            }
        }
        Ok(out)
    }
}

/// The run configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Solver used by `register`, `eval` and `bench`; training uses
    /// `train.solver`.
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_normalization")]
    pub normalization: Normalization,
}

fn default_normalization() -> Normalization {
    Normalization::UnitDiagonal
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            sweep: SweepConfig::default(),
            train: TrainConfig::default(),
            solver: SolverConfig::default(),
            normalization: Normalization::UnitDiagonal,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.sweep.specs()?;
        self.train.validate()?;
        self.solver.validate()
    }

    /// Applies a `--seed` override to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sweep.base_seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub axis_value: f64,
    pub seed: u64,
    pub primitive: Primitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub axis: Axis,
    pub bundles: Vec<ManifestEntry>,
}

fn bundle_name(axis: Axis, value: f64, seed: u64) -> String {
    format!("{}-{value:.4}-s{seed:03}", axis.name())
}

fn generate(sweep: &SweepConfig) -> Result<Vec<(ManifestEntry, RegistrationPair)>> {
    let specs = sweep.specs()?;
    specs
        .par_iter()
        .map(|&(value, seed, primitive, spec)| {
            let source = sample_primitive(primitive, sweep.points, seed)?;
            let mut pair = make_pair(&source, &spec)?;
            pair.meta.provenance = format!("synthetic {primitive} n={}", sweep.points);
            let entry = ManifestEntry {
                name: bundle_name(sweep.axis, value, seed),
                axis_value: value,
                seed,
                primitive,
            };
            Ok((entry, pair))
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Generates one bundle per (axis value, seed) plus a manifest.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let pairs = generate(&cfg.sweep)?;
    create_dir(out)?;
    for (entry, pair) in &pairs {
        write_bundle(pair, &out.join(&entry.name))?;
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        axis: cfg.sweep.axis,
        bundles: pairs.into_iter().map(|(e, _)| e).collect(),
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads every bundle under `dir` (or `dir` itself if it is a bundle).
pub fn load_pairs(dir: &Path) -> Result<Vec<(String, RegistrationPair)>> {
    let paths = list_bundles(dir)?;
    if paths.is_empty() {
        return Err(Error::format(dir, "no bundles found"));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, read_bundle(p)?))
        })
        .collect()
}

/// Trains on the bundles under `data`; writes `params.npz`,
/// `train_report.json` and `loss.csv`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, init: Option<&Path>, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let pairs: Vec<RegistrationPair> = load_pairs(data)?.into_iter().map(|(_, p)| p).collect();
    let params = match init {
        Some(path) => load_params(cfg, path)?,
        None => DescriptorParams::init(&cfg.train.descriptor, cfg.train.seed)?,
    };
    let (params, report) = train_from(&pairs, &cfg.train, params)?;
    create_dir(out)?;
    let path = out.join("params.npz");
    save_checkpoint(&path, &params, &Default::default())?;
    write_json(&out.join("train_report.json"), &report)?;
    fs::write(out.join("loss.csv"), report.loss_csv()).map_err(|e| Error::io(out, e))?;
    Ok(path)
}

/// Loads a checkpoint and checks it against the configured architecture.
pub fn load_params(cfg: &RunConfig, path: &Path) -> Result<DescriptorParams> {
    let (params, _) = load_checkpoint(path)?;
    let want = cfg.train.descriptor.d_model;
    let got = params.config().d_model;
    if got != want {
        return Err(Error::Compatibility(format!(
            "checkpoint {} has d_model = {got}, config expects {want}",
            path.display()
        )));
    }
    Ok(params)
}

/// Checkpoint parameters, or a seeded initialization when no path is given.
fn params_or_init(cfg: &RunConfig, path: Option<&Path>) -> Result<DescriptorParams> {
    match path {
        Some(p) => load_params(cfg, p),
        None => {
            log::warn!("no checkpoint given; using untrained parameters (seed {})", cfg.train.seed);
            DescriptorParams::init(&cfg.train.descriptor, cfg.train.seed)
        }
    }
}

/// Hex SHA-256 over every tensor's name and little-endian values.
pub fn params_hash(params: &DescriptorParams) -> String {
    let mut h = Sha256::new();
    for (name, t) in params.tensors() {
        h.update(name.as_bytes());
        for v in t.iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-point error used for colouring: distance to the ground-truth
/// correspondent where one exists, else to the nearest target point.
pub fn error_channel(pair: &RegistrationPair, registered: &PointCloud) -> Vec<f64> {
    let mut err = nearest_distances(registered, &pair.target);
    for &(i, j) in pair.correspondences.pairs() {
        err[i] = (registered.point(i) - pair.target.point(j)).norm();
    }
    err
}

/// Registers each pair under `pairs`; per pair writes `registered.xyz`,
/// `metrics.json` and `error.ply` into `out/<name>/`.
pub fn cmd_register(
    cfg: &RunConfig,
    params: Option<&Path>,
    pairs: &Path,
    out: &Path,
) -> Result<Vec<(String, PairMetrics)>> {
    cfg.validate()?;
    let params = params_or_init(cfg, params)?;
    let loaded = load_pairs(pairs)?;
    let results = loaded
        .par_iter()
        .map(|(name, pair)| {
            let field = register(&params, &pair.source, &pair.target, &cfg.solver, cfg.normalization)?;
            let registered = apply_deformation(&pair.source, &field)?;
            Ok((name.clone(), PairMetrics::compute(pair, &field)?, registered))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut metrics = Vec::with_capacity(results.len());
    for ((name, m, mut registered), (_, pair)) in results.into_iter().zip(&loaded) {
        let dir = out.join(&name);
        create_dir(&dir)?;
        write_xyz(&dir.join("registered.xyz"), &registered)?;
        write_json(&dir.join("metrics.json"), &m)?;
        registered.set_attribute("error", error_channel(pair, &registered))?;
        export_colorized(&registered, "error", &dir.join("error.ply"))?;
        metrics.push((name, m));
    }
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub params_hash: String,
    pub names: Vec<String>,
    pub metrics: ValidationReport,
}

/// Evaluates params on the bundles under `data`; writes `eval.json` and
/// `eval.csv`.
pub fn cmd_eval(cfg: &RunConfig, params: Option<&Path>, data: &Path, out: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let params = params_or_init(cfg, params)?;
    let loaded = load_pairs(data)?;
    let per_pair = loaded
        .par_iter()
        .map(|(_, pair)| {
            let field = register(&params, &pair.source, &pair.target, &cfg.solver, cfg.normalization)?;
            PairMetrics::compute(pair, &field)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport {
        config_hash: cfg.hash(),
        params_hash: params_hash(&params),
        names: loaded.iter().map(|(n, _)| n.clone()).collect(),
        metrics: ValidationReport::from_pairs(per_pair)?,
    };
    create_dir(out)?;
    write_json(&out.join("eval.json"), &report)?;
    let mut csv = String::from("pair,initial_mean_distance,registered_mean_distance,chamfer_initial,chamfer_registered\n");
    for (name, m) in report.names.iter().zip(&report.metrics.pairs) {
        csv.push_str(&format!(
            "{name},{:e},{:e},{:e},{:e}\n",
            m.initial_mean_distance, m.registered_mean_distance, m.chamfer_initial, m.chamfer_registered
        ));
    }
    fs::write(out.join("eval.csv"), csv).map_err(|e| Error::io(out, e))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub axis_value: f64,
    pub pairs: usize,
    pub initial_mean_distance: f64,
    pub registered_mean_distance: f64,
    pub median_registered_mean_distance: f64,
    pub chamfer_initial: f64,
    pub chamfer_registered: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub axis: Axis,
    pub config_hash: String,
    pub params_hash: String,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "{},pairs,initial_mean_distance,registered_mean_distance,median_registered_mean_distance,chamfer_initial,chamfer_registered\n",
            self.axis.name()
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}\n",
                r.axis_value,
                r.pairs,
                r.initial_mean_distance,
                r.registered_mean_distance,
                r.median_registered_mean_distance,
                r.chamfer_initial,
                r.chamfer_registered
            ));
        }
        s
    }
}

/// Wall-clock seconds per bench row, kept apart from the report so the
/// report itself stays reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchTiming {
    pub axis_value: f64,
    pub seconds: f64,
}

/// Pairs grouped by axis value, sorted ascending.
fn group_by_axis(axis: Axis, pairs: Vec<(f64, RegistrationPair)>) -> Vec<(f64, Vec<RegistrationPair>)> {
    let mut groups: Vec<(f64, Vec<RegistrationPair>)> = Vec::new();
    for (v, p) in pairs {
        match groups.iter_mut().find(|(g, _)| *g == v) {
            Some((_, list)) => list.push(p),
            None => groups.push((v, vec![p])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    log::debug!("bench over {} with {} rows", axis.name(), groups.len());
    groups
}

/// Benchmarks params along one challenge axis. Pairs come from the sweep
/// config, or from bundles under `data` (grouped by the axis value in each
/// bundle's metadata). Writes `bench.json`, `bench.csv` and `timing.json`.
pub fn cmd_bench(cfg: &RunConfig, params: Option<&Path>, data: Option<&Path>, out: &Path) -> Result<BenchReport> {
    cfg.validate()?;
    let params = params_or_init(cfg, params)?;
    let axis = cfg.sweep.axis;
    let tagged: Vec<(f64, RegistrationPair)> = match data {
        None => generate(&cfg.sweep)?.into_iter().map(|(e, p)| (e.axis_value, p)).collect(),
        Some(dir) => load_pairs(dir)?
            .into_iter()
            .map(|(name, p)| {
                let spec = p
                    .meta
                    .spec
                    .ok_or_else(|| Error::format(dir.join(&name), "bundle has no challenge spec"))?;
                Ok((axis.get(&spec), p))
            })
            .collect::<Result<_>>()?,
    };

    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for (value, group) in group_by_axis(axis, tagged) {
        let started = Instant::now();
        // Initial metrics do not depend on params; computed from the pair alone.
        let per_pair = group
            .par_iter()
            .map(|pair| {
                let field = register(&params, &pair.source, &pair.target, &cfg.solver, cfg.normalization)?;
                PairMetrics::compute(pair, &field)
            })
            .collect::<Result<Vec<_>>>()?;
        let agg = ValidationReport::from_pairs(per_pair)?;
        let n = agg.pairs.len() as f64;
        rows.push(BenchRow {
            axis_value: value,
            pairs: agg.pairs.len(),
            initial_mean_distance: agg.mean_initial,
            registered_mean_distance: agg.mean_registered,
            median_registered_mean_distance: agg.median_registered,
            chamfer_initial: agg.pairs.iter().map(|p| p.chamfer_initial).sum::<f64>() / n,
            chamfer_registered: agg.mean_chamfer_registered,
        });
        timing.push(BenchTiming {
            axis_value: value,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let report = BenchReport {
        schema_version: SCHEMA_VERSION,
        axis,
        config_hash: cfg.hash(),
        params_hash: params_hash(&params),
        rows,
    };
    create_dir(out)?;
    write_json(&out.join("bench.json"), &report)?;
    fs::write(out.join("bench.csv"), report.to_csv()).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("timing.json"), &timing)?;
    Ok(report)
}

/// Converts each 4DMatch record under `archive` into a bundle named after
/// the record file.
pub fn cmd_ingest_4dmatch(archive: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let paths = record_paths(archive)?;
    if paths.is_empty() {
        return Err(Error::format(archive, "no .npz records found"));
    }
    create_dir(out)?;
    let mut written = Vec::with_capacity(paths.len());
    for (index, path) in paths.iter().enumerate() {
        let with_index = |e: Error| Error::format(path, format!("record {index}: {e}"));
        let rec = read_record(path).map_err(with_index)?;
        let pair = record_to_pair(&rec, &format!("4DMatch {}", path.display())).map_err(with_index)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("record{index:05}"));
        let dir = out.join(stem);
        write_bundle(&pair, &dir)?;
        written.push(dir);
    }
    Ok(written)
}
