//! Supervised end-to-end training of the descriptor through the solver.
//!
//! The objective is the correspondence mean squared error of the soft
//! displacement output. Gradients flow back through the softmax weights,
//! the recorded min-sum branches and the unary costs into every
//! descriptor tensor. Pairs in a batch are processed independently (in
//! parallel) and their gradients averaged in a fixed order, so a run is
//! reproducible from its config and seed.

mod optim;

pub use optim::Adam;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Graph;
use crate::descriptor::{layers, save_checkpoint, DescriptorConfig, DescriptorParams};
use crate::error::{Error, Result};
use crate::geometry::{
    apply_deformation, chamfer_distance, mean_distance_over, DeformationField, PointCloud,
};
use crate::solver::{build_candidates, field_from_array, solve_on, CandidateSet, SolverConfig};
use crate::synth::RegistrationPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Rescale each pair so the source bounding-box diagonal is 1.
    UnitDiagonal,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    CorrMse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerVariant {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub normalization: Normalization,
    pub loss: LossVariant,
    pub optimizer: OptimizerVariant,
    pub solver: SolverConfig,
    pub descriptor: DescriptorConfig,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 1,
            seed: 0,
            normalization: Normalization::UnitDiagonal,
            loss: LossVariant::CorrMse,
            optimizer: OptimizerVariant::Adam,
            solver: SolverConfig::default(),
            descriptor: DescriptorConfig::default(),
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Config("checkpoint_every is set but checkpoint_dir is not".into()));
        }
        self.solver.validate()?;
        self.descriptor.validate()
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Hex SHA-256 of a value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch, measured during the epoch's pass.
    pub epoch_loss: Vec<f64>,
    /// Mean registered distance over correspondences after each epoch, in
    /// original units.
    pub val_mean_distance: Vec<f64>,
    /// Mean registered distance with the initial parameters.
    pub initial_val_mean_distance: f64,
    pub wall_clock_secs: f64,
    pub config_hash: String,
}

impl TrainReport {
    /// `epoch,loss,val_mean_distance` rows.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,loss,val_mean_distance\n");
        for (e, (l, v)) in self.epoch_loss.iter().zip(&self.val_mean_distance).enumerate() {
            s.push_str(&format!("{},{l:e},{v:e}\n", e + 1));
        }
        s
    }
}

/// `mean over (i, j) of ||(x_i + u_i) − y_j||²`.
pub fn loss(pair: &RegistrationPair, field: &DeformationField) -> Result<f64> {
    if pair.correspondences.is_empty() {
        return Err(Error::Config("loss needs ground-truth correspondences".into()));
    }
    if field.len() != pair.source.len() {
        return Err(Error::Dimension(format!(
            "field has {} vectors for {} source points",
            field.len(),
            pair.source.len()
        )));
    }
    let u = field.displacements();
    let total: f64 = pair
        .correspondences
        .pairs()
        .iter()
        .map(|&(i, j)| (pair.source.point(i) + u[i] - pair.target.point(j)).norm_squared())
        .sum();
    Ok(total / pair.correspondences.len() as f64)
}

/// A pair in training units with its candidate skeleton.
struct Prepared {
    scale: f64,
    source: Array2<f64>,
    target: Array2<f64>,
    cs: CandidateSet,
    src_idx: Vec<usize>,
    /// `y_j − x_i` per correspondence, training units.
    offsets: Array2<f64>,
}

fn scale_for(source: &PointCloud, mode: Normalization) -> Result<f64> {
    match mode {
        Normalization::None => Ok(1.0),
        Normalization::UnitDiagonal => {
            let d = source.diagonal();
            if !(d > 0.0) {
                return Err(Error::Input("source cloud has zero extent".into()));
            }
            Ok(1.0 / d)
        }
    }
}

fn prepare(pair: &RegistrationPair, solver: &SolverConfig, mode: Normalization) -> Result<Prepared> {
    if pair.correspondences.is_empty() {
        return Err(Error::Config("training pair has no correspondences".into()));
    }
    let scale = scale_for(&pair.source, mode)?;
    let source = pair.source.scaled(scale)?;
    let target = pair.target.scaled(scale)?;
    let cs = build_candidates(&source, &target, solver)?;
    let corr = pair.correspondences.pairs();
    let offsets = Array2::from_shape_fn((corr.len(), 3), |(r, a)| {
        let (i, j) = corr[r];
        target.point(j)[a] - source.point(i)[a]
    });
    Ok(Prepared {
        scale,
        source: source.to_array(),
        target: target.to_array(),
        cs,
        src_idx: pair.correspondences.source_indices(),
        offsets,
    })
}

struct Pass {
    loss: f64,
    grads: Option<BTreeMap<String, Array2<f64>>>,
    branch: u64,
    field: Array2<f64>,
}

fn forward(params: &DescriptorParams, prep: &Prepared, solver: &SolverConfig, with_grad: bool) -> Result<Pass> {
    let mut g = Graph::new();
    let p = params.attach(&mut g);
    let x = g.leaf(prep.source.clone());
    let y = g.leaf(prep.target.clone());
    let (fx, fy) = layers::describe(&mut g, &p, params.config(), x, y);
    let out = solve_on(&mut g, fx, fy, &prep.cs, solver)?;
    let moved = g.gather_rows(out.displacement, &prep.src_idx);
    let want = g.leaf(prep.offsets.clone());
    let residual = g.sub(moved, want);
    let loss = g.mean_squared_row_norm(residual);
    let grads = with_grad.then(|| {
        let mut all = g.backward(loss);
        p.iter()
            .map(|(name, &v)| {
                let grad = all
                    .take(v)
                    .unwrap_or_else(|| Array2::zeros(params.get(name).raw_dim()));
                (name.clone(), grad)
            })
            .collect()
    });
    Ok(Pass {
        loss: g.scalar(loss),
        grads,
        branch: g.branch_signature(),
        field: g.value(out.displacement).clone(),
    })
}

/// Training loss of `params` on `pair` (no normalization) together with
/// the signature of every discrete choice made on the way. Two
/// evaluations with equal signatures lie on the same smooth branch.
pub fn loss_with_branch(params: &DescriptorParams, pair: &RegistrationPair, solver: &SolverConfig) -> Result<(f64, u64)> {
    let prep = prepare(pair, solver, Normalization::None)?;
    let pass = forward(params, &prep, solver, false)?;
    Ok((pass.loss, pass.branch))
}

/// Training loss and its gradient for every descriptor tensor.
pub fn loss_and_gradient(
    params: &DescriptorParams,
    pair: &RegistrationPair,
    solver: &SolverConfig,
) -> Result<(f64, BTreeMap<String, Array2<f64>>)> {
    let prep = prepare(pair, solver, Normalization::None)?;
    let pass = forward(params, &prep, solver, true)?;
    Ok((pass.loss, pass.grads.expect("gradients requested")))
}

/// Registers `source` onto `target`, returning the field in original units.
pub fn register(
    params: &DescriptorParams,
    source: &PointCloud,
    target: &PointCloud,
    solver: &SolverConfig,
    mode: Normalization,
) -> Result<DeformationField> {
    let scale = scale_for(source, mode)?;
    let s = source.scaled(scale)?;
    let t = target.scaled(scale)?;
    let cs = build_candidates(&s, &t, solver)?;
    let mut g = Graph::new();
    let p = params.attach(&mut g);
    let x = g.leaf(s.to_array());
    let y = g.leaf(t.to_array());
    let (fx, fy) = layers::describe(&mut g, &p, params.config(), x, y);
    let out = solve_on(&mut g, fx, fy, &cs, solver)?;
    Ok(field_from_array(g.value(out.displacement))?.scaled(1.0 / scale))
}

/// Per-pair evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub initial_mean_distance: f64,
    pub registered_mean_distance: f64,
    /// Chamfer distance between the registered source and the target.
    pub chamfer_registered: f64,
    pub chamfer_initial: f64,
}

impl PairMetrics {
    pub fn compute(pair: &RegistrationPair, field: &DeformationField) -> Result<Self> {
        let registered = apply_deformation(&pair.source, field)?;
        Ok(Self {
            initial_mean_distance: mean_distance_over(&pair.source, &pair.target, &pair.correspondences)?,
            registered_mean_distance: mean_distance_over(&registered, &pair.target, &pair.correspondences)?,
            chamfer_registered: chamfer_distance(&registered, &pair.target)?,
            chamfer_initial: chamfer_distance(&pair.source, &pair.target)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pairs: Vec<PairMetrics>,
    pub mean_registered: f64,
    pub median_registered: f64,
    pub mean_initial: f64,
    pub median_initial: f64,
    pub mean_chamfer_registered: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

impl ValidationReport {
    pub fn from_pairs(pairs: Vec<PairMetrics>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("no pairs to aggregate".into()));
        }
        let reg: Vec<f64> = pairs.iter().map(|p| p.registered_mean_distance).collect();
        let init: Vec<f64> = pairs.iter().map(|p| p.initial_mean_distance).collect();
        let ch: Vec<f64> = pairs.iter().map(|p| p.chamfer_registered).collect();
        Ok(Self {
            mean_registered: mean(&reg),
            median_registered: median(&reg),
            mean_initial: mean(&init),
            median_initial: median(&init),
            mean_chamfer_registered: mean(&ch),
            pairs,
        })
    }
}

/// Registers every pair and aggregates the metrics.
pub fn validate(
    params: &DescriptorParams,
    dataset: &[RegistrationPair],
    solver: &SolverConfig,
    mode: Normalization,
) -> Result<ValidationReport> {
    let pairs = dataset
        .par_iter()
        .map(|pair| {
            let field = register(params, &pair.source, &pair.target, solver, mode)?;
            PairMetrics::compute(pair, &field)
        })
        .collect::<Result<Vec<_>>>()?;
    ValidationReport::from_pairs(pairs)
}

fn validation_distance(
    params: &DescriptorParams,
    dataset: &[RegistrationPair],
    prepared: &[Prepared],
    solver: &SolverConfig,
) -> Result<f64> {
    let dists = dataset
        .par_iter()
        .zip(prepared.par_iter())
        .map(|(pair, prep)| {
            let pass = forward(params, prep, solver, false)?;
            let field = field_from_array(&pass.field)?.scaled(1.0 / prep.scale);
            let registered = apply_deformation(&pair.source, &field)?;
            mean_distance_over(&registered, &pair.target, &pair.correspondences)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&dists))
}

/// Trains from a fresh seeded initialization.
pub fn train(dataset: &[RegistrationPair], cfg: &TrainConfig) -> Result<(DescriptorParams, TrainReport)> {
    cfg.validate()?;
    let params = DescriptorParams::init(&cfg.descriptor, cfg.seed)?;
    train_from(dataset, cfg, params)
}

/// Trains starting from `params`, whose architecture must match the config.
pub fn train_from(
    dataset: &[RegistrationPair],
    cfg: &TrainConfig,
    mut params: DescriptorParams,
) -> Result<(DescriptorParams, TrainReport)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset is empty".into()));
    }
    if params.config() != &cfg.descriptor {
        return Err(Error::Compatibility(
            "initial parameters do not match the configured architecture".into(),
        ));
    }
    let started = Instant::now();
    let prepared = dataset
        .iter()
        .map(|p| prepare(p, &cfg.solver, cfg.normalization))
        .collect::<Result<Vec<_>>>()?;
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        val_mean_distance: Vec::with_capacity(cfg.epochs),
        initial_val_mean_distance: validation_distance(&params, dataset, &prepared, &cfg.solver)?,
        wall_clock_secs: 0.0,
        config_hash: cfg.hash(),
    };
    let mut opt = Adam::new(cfg.learning_rate, &params);
    // Separate stream from the initializer so data order does not shift
    // with architecture changes.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_da7a);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let passes = batch
                .par_iter()
                .map(|&i| forward(&params, &prepared[i], &cfg.solver, true))
                .collect::<Result<Vec<_>>>()?;
            let mut grads: BTreeMap<String, Array2<f64>> = BTreeMap::new();
            for pass in &passes {
                if !pass.loss.is_finite() {
                    return Err(Error::Divergence { epoch, loss: pass.loss });
                }
                epoch_total += pass.loss;
                for (name, gr) in pass.grads.as_ref().expect("gradients requested") {
                    match grads.get_mut(name) {
                        Some(acc) => *acc += gr,
                        None => {
                            grads.insert(name.clone(), gr.clone());
                        }
                    }
                }
            }
            let inv = 1.0 / passes.len() as f64;
            for gr in grads.values_mut() {
                *gr *= inv;
            }
            opt.step(&mut params, &grads);
        }
        let epoch_loss = epoch_total / dataset.len() as f64;
        if !epoch_loss.is_finite() || params.tensors().values().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence { epoch, loss: epoch_loss });
        }
        let val = validation_distance(&params, dataset, &prepared, &cfg.solver)?;
        log::info!("epoch {epoch}: loss {epoch_loss:.6e}, val mean distance {val:.6e}");
        report.epoch_loss.push(epoch_loss);
        report.val_mean_distance.push(val);

        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            let dir = cfg.checkpoint_dir.as_ref().expect("validated");
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            save_checkpoint(&dir.join(format!("epoch_{epoch:04}.npz")), &params, &opt.state())?;
        }
    }
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CorrespondenceSet, RigidTransform, Vec3};
    use crate::synth::{make_pair, sample_primitive, ChallengeSpec, PairMeta, Primitive};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            learning_rate: 1e-2,
            solver: SolverConfig {
                k_cand: 4,
                k_reg: 3,
                ..SolverConfig::default()
            },
            descriptor: DescriptorConfig::tiny(),
            ..TrainConfig::default()
        }
    }

    fn pair(level: f64, seed: u64, n: usize) -> RegistrationPair {
        let source = sample_primitive(Primitive::Sphere, n, seed).unwrap();
        let spec = ChallengeSpec {
            deformation_level: level,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            overlap_ratio: 1.0,
            rotation_max: 0.0,
            seed,
        };
        make_pair(&source, &spec).unwrap()
    }

    #[test]
    fn loss_examples() {
        let p = pair(0.3, 1, 40);
        assert!(loss(&p, &p.field_gt).unwrap() < 1e-28);
        let zero = DeformationField::zeros(p.source.len());
        let expected: f64 = p
            .correspondences
            .pairs()
            .iter()
            .map(|&(i, j)| (p.source.point(i) - p.target.point(j)).norm_squared())
            .sum::<f64>()
            / p.correspondences.len() as f64;
        assert!((loss(&p, &zero).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn loss_hand_evaluated() {
        let source = PointCloud::from_arrays(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]).unwrap();
        let target = PointCloud::from_arrays(&[[0.5, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 2.0, 3.0]]).unwrap();
        let p = RegistrationPair {
            correspondences: CorrespondenceSet::new(vec![(0, 0), (1, 1), (2, 2)], 3, 3).unwrap(),
            field_gt: DeformationField::zeros(3),
            rigid: RigidTransform::identity(),
            outliers: vec![],
            meta: PairMeta::default(),
            source,
            target,
        };
        let field = DeformationField::new(vec![
            Vec3::new(0.25, 0.0, 0.0),
            Vec3::new(0.0, 0.5, 0.5),
            Vec3::new(1.0, 0.0, 1.0),
        ])
        .unwrap();
        // residuals: (-0.25,0,0), (0,-0.5,0.5), (1,0,-2)
        let expected = (0.0625 + 0.5 + 5.0) / 3.0;
        assert!((loss(&p, &field).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn missing_correspondences_is_config_error() {
        let mut p = pair(0.1, 2, 20);
        p.correspondences = CorrespondenceSet::default();
        let err = loss(&p, &DeformationField::zeros(20)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn zero_epochs_returns_init() {
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        let (params, report) = train(&[pair(0.2, 3, 32)], &cfg).unwrap();
        assert_eq!(params, DescriptorParams::init(&cfg.descriptor, cfg.seed).unwrap());
        assert!(report.epoch_loss.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let data = [pair(0.2, 4, 32), pair(0.2, 5, 32)];
        let cfg = TrainConfig { batch_size: 2, ..tiny_cfg() };
        let (p1, r1) = train(&data, &cfg).unwrap();
        let (p2, r2) = train(&data, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1.epoch_loss, r2.epoch_loss);
        assert_eq!(r1.val_mean_distance, r2.val_mean_distance);
        assert_eq!(r1.config_hash, r2.config_hash);
        assert_eq!(r1.epoch_loss.len(), 3);
    }

    #[test]
    fn trivial_pair_does_not_get_worse() {
        let mut p = pair(0.0, 6, 32);
        p.target = p.source.clone();
        let cfg = TrainConfig { epochs: 5, ..tiny_cfg() };
        let (_, r) = train(&[p], &cfg).unwrap();
        assert!(r.epoch_loss.last().unwrap() <= &(r.epoch_loss[0] + 1e-12));
    }

    #[test]
    fn checkpoints_at_cadence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            checkpoint_every: 2,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..tiny_cfg()
        };
        let (params, _) = train(&[pair(0.2, 7, 32)], &cfg).unwrap();
        let (last, extra) = crate::descriptor::load_checkpoint(&dir.path().join("epoch_0004.npz")).unwrap();
        assert!(dir.path().join("epoch_0002.npz").exists());
        assert_eq!(last, params);
        let opt = Adam::restore(cfg.learning_rate, &last, &extra).unwrap();
        assert_eq!(opt.step_count(), 4);
    }

    #[test]
    fn unit_diagonal_reports_original_units() {
        let p = pair(0.3, 8, 40);
        let big = RegistrationPair {
            source: p.source.scaled(10.0).unwrap(),
            target: p.target.scaled(10.0).unwrap(),
            field_gt: p.field_gt.scaled(10.0),
            ..p.clone()
        };
        let params = DescriptorParams::init(&DescriptorConfig::tiny(), 0).unwrap();
        let solver = tiny_cfg().solver;
        let small = validate(&params, &[p], &solver, Normalization::UnitDiagonal).unwrap();
        let large = validate(&params, &[big], &solver, Normalization::UnitDiagonal).unwrap();
        assert!((large.mean_registered - 10.0 * small.mean_registered).abs() < 1e-9);
        assert!((large.mean_initial - 10.0 * small.mean_initial).abs() < 1e-9);
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"epochs": 2, "bogus": 1}"#);
        assert!(err.is_err());
        let ok: TrainConfig = serde_json::from_str(r#"{"epochs": 2, "normalization": "none"}"#).unwrap();
        assert_eq!(ok.normalization, Normalization::None);
    }
}
