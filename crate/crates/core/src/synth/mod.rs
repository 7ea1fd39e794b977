//! Seeded generator of synthetic registration pairs.
//!
//! A pair is built by warping a source cloud with a smooth radial-basis
//! displacement field, rotating the result about z, cropping it to a target
//! overlap ratio, and finally corrupting it with Gaussian noise and uniform
//! outliers. Every stage draws from its own seed, derived from the single
//! seed in [`ChallengeSpec`].

mod primitives;

pub use primitives::{normalize_unit_diagonal, sample_primitive, Primitive};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    apply_deformation, apply_rigid, CorrespondenceSet, DeformationField, PointCloud,
    RigidTransform, Vec3,
};

/// Number of Gaussian kernels summed into a deformation field.
pub const RBF_KERNELS: usize = 8;
/// Kernel bandwidth as a fraction of the bounding-box diagonal.
pub const RBF_BANDWIDTH: f64 = 0.3;
/// 95th-percentile displacement at level 1, as a fraction of the diagonal.
pub const LEVEL_CALIBRATION: f64 = 0.5;
/// Permitted gap between requested and achieved overlap.
pub const OVERLAP_TOLERANCE: f64 = 0.02;
/// Outlier box growth relative to the cloud's bounding box.
pub const OUTLIER_BOX_INFLATION: f64 = 0.10;

/// The challenge axes for one generated pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChallengeSpec {
    pub deformation_level: f64,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub overlap_ratio: f64,
    pub rotation_max: f64,
    pub seed: u64,
}

impl Default for ChallengeSpec {
    fn default() -> Self {
        Self {
            deformation_level: 0.0,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            overlap_ratio: 1.0,
            rotation_max: 0.0,
            seed: 0,
        }
    }
}

impl ChallengeSpec {
    pub fn validate(&self) -> Result<()> {
        check_level(self.deformation_level)?;
        check_sigma(self.noise_sigma)?;
        check_fraction(self.outlier_fraction)?;
        check_ratio(self.overlap_ratio)?;
        if !(self.rotation_max >= 0.0 && self.rotation_max.is_finite()) {
            return Err(Error::Parameter(format!(
                "rotation_max must be a nonnegative angle, got {}",
                self.rotation_max
            )));
        }
        Ok(())
    }

    pub fn stage_seeds(&self) -> StageSeeds {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        StageSeeds {
            deform: rng.next_u64(),
            rotate: rng.next_u64(),
            crop: rng.next_u64(),
            noise: rng.next_u64(),
            outliers: rng.next_u64(),
        }
    }
}

/// Per-stage seeds recorded alongside each generated pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSeeds {
    pub deform: u64,
    pub rotate: u64,
    pub crop: u64,
    pub noise: u64,
    pub outliers: u64,
}

/// Descriptive metadata carried with a pair through the bundle format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PairMeta {
    pub spec: Option<ChallengeSpec>,
    pub stage_seeds: Option<StageSeeds>,
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Source and target clouds plus everything known about how they relate.
///
/// `field_gt` is defined for every source point; `rigid` is applied after
/// it. For a correspondence `(i, j)` in a noiseless pair,
/// `rigid(source[i] + field_gt[i]) == target[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationPair {
    pub source: PointCloud,
    pub target: PointCloud,
    pub correspondences: CorrespondenceSet,
    pub field_gt: DeformationField,
    pub rigid: RigidTransform,
    /// Target indices of injected outlier points.
    pub outliers: Vec<usize>,
    pub meta: PairMeta,
}

impl RegistrationPair {
    /// Checks the structural invariants (sizes and index ranges).
    pub fn validate(&self) -> Result<()> {
        if self.field_gt.len() != self.source.len() {
            return Err(Error::Dimension(format!(
                "ground-truth field has {} vectors for {} source points",
                self.field_gt.len(),
                self.source.len()
            )));
        }
        CorrespondenceSet::new(
            self.correspondences.pairs().to_vec(),
            self.source.len(),
            self.target.len(),
        )?;
        if let Some(&bad) = self.outliers.iter().find(|&&j| j >= self.target.len()) {
            return Err(Error::Dimension(format!("outlier index {bad} out of range")));
        }
        Ok(())
    }

    /// Largest residual between transported source points and their target
    /// correspondents.
    pub fn ground_truth_residual(&self) -> f64 {
        self.correspondences
            .pairs()
            .iter()
            .map(|&(i, j)| {
                let moved = self
                    .rigid
                    .apply_point(&(self.source.point(i) + self.field_gt.displacements()[i]));
                (moved - self.target.point(j)).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Fraction of source points whose correspondent is present in the target.
    pub fn overlap(&self) -> f64 {
        self.correspondences.len() as f64 / self.source.len() as f64
    }

    /// Source points with a correspondent, paired with those target points.
    pub fn corresponding_clouds(&self) -> Result<(PointCloud, PointCloud)> {
        Ok((
            self.source.select(&self.correspondences.source_indices())?,
            self.target.select(&self.correspondences.target_indices())?,
        ))
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::Parameter(format!(
            "deformation level must lie in [0, 1], got {level}"
        )));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!(
            "noise sigma must be nonnegative, got {sigma}"
        )));
    }
    Ok(())
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Parameter(format!(
            "outlier fraction must lie in [0, 1), got {fraction}"
        )));
    }
    Ok(())
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Parameter(format!(
            "overlap ratio must lie in (0, 1], got {ratio}"
        )));
    }
    Ok(())
}

/// Nearest-rank 95th percentile.
pub fn percentile_95(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Smooth radial-basis warp whose 95th-percentile displacement magnitude is
/// `level × 0.5 × diagonal`.
pub fn deform(source: &PointCloud, level: f64, seed: u64) -> Result<(PointCloud, DeformationField)> {
    check_level(level)?;
    if level == 0.0 {
        return Ok((source.clone(), DeformationField::zeros(source.len())));
    }
    let diag = source.diagonal();
    if diag <= 0.0 {
        return Err(Error::Generation("source cloud has zero extent".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels: Vec<(Vec3, Vec3)> = (0..RBF_KERNELS)
        .map(|_| {
            let centre = source.point(rng.random_range(0..source.len()));
            let direction = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            (centre, direction)
        })
        .collect();
    let bandwidth = RBF_BANDWIDTH * diag;
    let denom = 2.0 * bandwidth * bandwidth;
    let raw: Vec<Vec3> = source
        .points()
        .iter()
        .map(|p| {
            kernels
                .iter()
                .map(|(c, v)| v * (-(p - c).norm_squared() / denom).exp())
                .sum()
        })
        .collect();
    let raw_p95 = percentile_95(&raw.iter().map(|u| u.norm()).collect::<Vec<_>>());
    if raw_p95 <= 0.0 || !raw_p95.is_finite() {
        return Err(Error::Generation("degenerate deformation field".into()));
    }
    let scale = level * LEVEL_CALIBRATION * diag / raw_p95;
    let field = DeformationField::new(raw.into_iter().map(|u| u * scale).collect())?;
    let deformed = apply_deformation(source, &field)?;
    Ok((deformed, field))
}

/// Adds independent zero-mean Gaussian noise to every coordinate.
pub fn add_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    check_sigma(sigma)?;
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            p + Vec3::new(
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            )
        })
        .collect();
    cloud.with_points(points)
}

/// Box the outliers are drawn from: the bounding box grown by 10% about
/// its centre.
pub fn outlier_box(cloud: &PointCloud) -> (Vec3, Vec3) {
    let (lo, hi) = cloud.bounding_box();
    let centre = (lo + hi) * 0.5;
    let half = (hi - lo) * (0.5 * (1.0 + OUTLIER_BOX_INFLATION));
    (centre - half, centre + half)
}

/// Appends `round(fraction × n)` uniform points from [`outlier_box`].
/// Returns the grown cloud and the indices of the appended points.
pub fn add_outliers(cloud: &PointCloud, fraction: f64, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
    check_fraction(fraction)?;
    let n = cloud.len();
    let count = (fraction * n as f64).round() as usize;
    if count == 0 {
        return Ok((cloud.clone(), Vec::new()));
    }
    let (lo, hi) = outlier_box(cloud);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = cloud.points().to_vec();
    for _ in 0..count {
        let mut p = Vec3::zeros();
        for a in 0..3 {
            p[a] = if hi[a] > lo[a] {
                rng.random_range(lo[a]..=hi[a])
            } else {
                lo[a]
            };
        }
        points.push(p);
    }
    Ok((PointCloud::new(points)?, (n..n + count).collect()))
}

/// Removes target points behind a randomly oriented plane so that the
/// fraction of source points with a surviving correspondent is `ratio`.
pub fn crop_to_overlap(pair: &RegistrationPair, ratio: f64, seed: u64) -> Result<RegistrationPair> {
    check_ratio(ratio)?;
    if ratio == 1.0 {
        return Ok(pair.clone());
    }
    let n_source = pair.source.len();
    let wanted = (ratio * n_source as f64).round() as usize;
    if wanted == 0 || wanted > pair.correspondences.len() {
        return Err(Error::Generation(format!(
            "overlap {ratio} needs {wanted} correspondences but the pair has {}",
            pair.correspondences.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = primitives::random_direction(&mut rng);
    let projection: Vec<f64> = pair.target.points().iter().map(|p| p.dot(&direction)).collect();

    let mut corr_proj: Vec<f64> = pair
        .correspondences
        .pairs()
        .iter()
        .map(|&(_, j)| projection[j])
        .collect();
    corr_proj.sort_by(f64::total_cmp);
    let threshold = corr_proj[wanted - 1];

    let kept: Vec<usize> = (0..pair.target.len())
        .filter(|&j| projection[j] <= threshold)
        .collect();
    let mut remap = vec![usize::MAX; pair.target.len()];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new;
    }
    let pairs: Vec<(usize, usize)> = pair
        .correspondences
        .pairs()
        .iter()
        .filter(|&&(_, j)| remap[j] != usize::MAX)
        .map(|&(i, j)| (i, remap[j]))
        .collect();

    let achieved = pairs.len() as f64 / n_source as f64;
    if (achieved - ratio).abs() > OVERLAP_TOLERANCE {
        return Err(Error::Generation(format!(
            "half-space crop reached overlap {achieved:.4}, requested {ratio}"
        )));
    }

    let target = pair.target.select(&kept)?;
    let correspondences = CorrespondenceSet::new(pairs, n_source, target.len())?;
    let outliers = pair
        .outliers
        .iter()
        .filter(|&&j| remap[j] != usize::MAX)
        .map(|&j| remap[j])
        .collect();
    Ok(RegistrationPair {
        source: pair.source.clone(),
        target,
        correspondences,
        field_gt: pair.field_gt.clone(),
        rigid: pair.rigid,
        outliers,
        meta: pair.meta.clone(),
    })
}

/// Runs the full pipeline: deform, rotate about z, crop, add noise, add outliers.
pub fn make_pair(source: &PointCloud, spec: &ChallengeSpec) -> Result<RegistrationPair> {
    spec.validate()?;
    let seeds = spec.stage_seeds();

    let (deformed, field_gt) = deform(source, spec.deformation_level, seeds.deform)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seeds.rotate);
    let angle = rng.random::<f64>() * spec.rotation_max;
    let rigid = RigidTransform::rotation_z(angle);
    let target = apply_rigid(&deformed, &rigid)?;

    let pair = RegistrationPair {
        correspondences: CorrespondenceSet::identity(source.len()),
        source: source.clone(),
        target,
        field_gt,
        rigid,
        outliers: Vec::new(),
        meta: PairMeta {
            spec: Some(*spec),
            stage_seeds: Some(seeds),
            provenance: "synthetic".into(),
            overlap: None,
            label: None,
        },
    };
    let mut pair = crop_to_overlap(&pair, spec.overlap_ratio, seeds.crop)?;
    pair.target = add_noise(&pair.target, spec.noise_sigma, seeds.noise)?;
    let (target, outliers) = add_outliers(&pair.target, spec.outlier_fraction, seeds.outliers)?;
    pair.target = target;
    pair.outliers = outliers;
    pair.meta.overlap = Some(pair.overlap());
    Ok(pair)
}
